//! Anchor training, the two hypernetwork stages and their schedules.

mod anchor;
mod stages;

pub use anchor::{train_anchor, AnchorReport};
pub use stages::{stage1_terms, stage2_terms, train_edge, train_weight, StageTerms, StepSample};

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::benchsynth::TaskDataset;
use crate::controller::{EdgeHypernet, Preference, WeightHypernet};
use crate::error::{Error, Result};
use crate::numkernel::{Rng, Tensor};
use crate::objectives::{default_tau, rsa_affinity, LossWeights, TaskAffinity};
use crate::searchspace::{AnchorConfig, AnchorNet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Optimizer steps per anchor stream.
    pub anchor_steps: usize,
    pub anchor_learning_rate: f64,
    pub edge_steps: usize,
    pub weight_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Factor applied at every milestone.
    pub lr_decay: f64,
    /// Milestones as fractions of a stage's step count.
    pub lr_milestones: Vec<f64>,
    /// Symmetric Dirichlet concentration for task preferences.
    pub eta: f64,
    /// Activity threshold; `0.6 / N` when absent.
    pub tau: Option<f64>,
    pub lambda_active: f64,
    pub lambda_inactive: f64,
    /// Per-task loss scale factors; all ones when absent.
    pub loss_scale: Option<Vec<f64>>,
    pub zeta_init: f64,
    pub zeta_decay: f64,
    pub zeta_interval: usize,
    /// Initial "keep own stream" logit of the edge hypernet.
    pub edge_diag_bias: f64,
    /// Probe count for the task affinity.
    pub affinity_probes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            anchor_steps: 2000,
            anchor_learning_rate: 3e-3,
            edge_steps: 3000,
            weight_steps: 2000,
            batch_size: 64,
            learning_rate: 1e-3,
            lr_decay: 0.3,
            lr_milestones: vec![14.0 / 30.0, 28.0 / 30.0],
            eta: 0.2,
            tau: None,
            lambda_active: 1.0,
            lambda_inactive: 0.1,
            loss_scale: None,
            zeta_init: 5.0,
            zeta_decay: 0.97,
            zeta_interval: 30,
            edge_diag_bias: 1.0,
            affinity_probes: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, tasks: usize) -> Result<()> {
        let positive = [
            ("anchor_steps", self.anchor_steps),
            ("batch_size", self.batch_size),
            ("zeta_interval", self.zeta_interval),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be at least 2"));
        }
        if self.affinity_probes < 2 {
            return Err(Error::invalid("affinity_probes must be at least 2"));
        }
        if !(self.eta > 0.0) {
            return Err(Error::invalid("eta must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.anchor_learning_rate > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if !(self.lr_decay > 0.0) || self.lr_milestones.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::invalid("lr_decay must be positive and milestones in [0, 1]"));
        }
        if !(self.zeta_init > 0.0) || !(self.zeta_decay > 0.0) {
            return Err(Error::invalid("temperature schedule must be positive"));
        }
        if let Some(t) = self.tau {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::invalid("tau must lie in (0, 1)"));
            }
        }
        if self.loss_scale.as_ref().is_some_and(|w| w.len() != tasks) {
            return Err(Error::invalid(format!("loss_scale needs {tasks} entries")));
        }
        self.loss_weights(tasks).validate()
    }

    pub fn tau_for(&self, tasks: usize) -> f64 {
        self.tau.unwrap_or_else(|| default_tau(tasks))
    }

    pub fn eta_for(&self, tasks: usize) -> Vec<f64> {
        vec![self.eta; tasks]
    }

    pub fn loss_weights(&self, tasks: usize) -> LossWeights {
        LossWeights {
            w: self.loss_scale.clone().unwrap_or_else(|| vec![1.0; tasks]),
            lambda_active: self.lambda_active,
            lambda_inactive: self.lambda_inactive,
        }
    }
}

/// `r ~ Dirichlet(η)` and `c ~ Unif(0, 1)`, independently.
pub fn sample_preference(rng: &mut Rng, eta: &[f64]) -> Result<Preference> {
    let r = rng.sample_dirichlet(eta)?;
    let c = rng.uniform();
    Preference::new(r, c)
}

/// `ζ = init · decay^⌊step / interval⌋`
pub fn temperature(step: usize, config: &TrainConfig) -> f64 {
    config.zeta_init * config.zeta_decay.powi((step / config.zeta_interval) as i32)
}

/// `lr0 · decay^k` where `k` counts milestones already reached.
pub fn lr_at(step: usize, total: usize, config: &TrainConfig, lr0: f64) -> f64 {
    let passed = config
        .lr_milestones
        .iter()
        .filter(|&&m| step >= (m * total as f64).round() as usize)
        .count();
    lr0 * config.lr_decay.powi(passed as i32)
}

/// Uniform batch indices with replacement.
pub(crate) fn batch_indices(rng: &mut Rng, n: usize, size: usize) -> Vec<usize> {
    (0..size).map(|_| rng.below(n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub task_loss: f64,
    pub active: f64,
    pub inactive: f64,
    pub omega: f64,
    pub zeta: f64,
    pub c: f64,
    pub r: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub stage: &'static str,
    pub records: Vec<StepRecord>,
    pub wall_clock_secs: f64,
    /// Parameter fingerprint of the component the stage produced.
    pub fingerprint: String,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let n = self.records.first().map_or(0, |r| r.r.len());
        let mut out = String::from("step,task_loss,active,inactive,omega,zeta,c");
        for i in 1..=n {
            write!(out, ",r_{i}").expect("writing to a string");
        }
        out.push('\n');
        for r in &self.records {
            write!(
                out,
                "{},{},{},{},{},{},{}",
                r.step, r.task_loss, r.active, r.inactive, r.omega, r.zeta, r.c
            )
            .expect("writing to a string");
            for v in &r.r {
                write!(out, ",{v}").expect("writing to a string");
            }
            out.push('\n');
        }
        out
    }

    /// Mean of `task_loss + omega` over a fraction of the records at the
    /// start (`from_end == false`) or the end.
    pub fn window_mean(&self, fraction: f64, from_end: bool) -> f64 {
        let k = ((self.records.len() as f64 * fraction).ceil() as usize).clamp(1, self.records.len().max(1));
        let slice = if from_end {
            &self.records[self.records.len() - k..]
        } else {
            &self.records[..k]
        };
        slice.iter().map(|r| r.task_loss + r.omega).sum::<f64>() / k as f64
    }
}

/// Everything a full training run produces.
#[derive(Debug, Clone)]
pub struct TrainedBundle {
    pub anchor: AnchorNet,
    pub anchor_report: AnchorReport,
    pub affinity: TaskAffinity,
    pub edge: EdgeHypernet,
    pub edge_report: TrainReport,
    pub weight: WeightHypernet,
    pub weight_report: TrainReport,
}

/// Probe inputs for the affinity: `K` training rows drawn by seed.
pub fn affinity_probes(config: &TrainConfig, data: &TaskDataset) -> Tensor {
    let mut rng = Rng::new(config.seed).substream("affinity");
    let mut idx: Vec<usize> = (0..data.train.len()).collect();
    // partial Fisher-Yates
    let k = config.affinity_probes.min(idx.len());
    for i in 0..k {
        let j = i + rng.below(idx.len() - i);
        idx.swap(i, j);
    }
    data.train.inputs.gather_rows(&idx[..k])
}

/// Anchor, affinity, edge stage, weight stage, in that order.
pub fn train_pipeline(config: &TrainConfig, anchor_config: &AnchorConfig, data: &TaskDataset) -> Result<TrainedBundle> {
    config.validate(anchor_config.tasks)?;
    let started = Instant::now();
    let (anchor, anchor_report) = train_anchor(config, anchor_config, &data.train, &data.task_names())?;
    log::info!("anchor trained in {:.1}s", started.elapsed().as_secs_f64());
    let affinity = rsa_affinity(&anchor, &affinity_probes(config, data))?;
    let (edge, edge_report) = train_edge(config, &anchor, &affinity, data)?;
    log::info!("edge stage done in {:.1}s", edge_report.wall_clock_secs);
    let (weight, weight_report) = train_weight(config, &anchor, &edge, data)?;
    log::info!("weight stage done in {:.1}s", weight_report.wall_clock_secs);
    Ok(TrainedBundle {
        anchor,
        anchor_report,
        affinity,
        edge,
        edge_report,
        weight,
        weight_report,
    })
}
