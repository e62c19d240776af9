use std::time::Instant;

use super::{batch_indices, lr_at, sample_preference, temperature, StepRecord, TrainConfig, TrainReport};
use crate::benchsynth::TaskDataset;
use crate::controller::{EdgeHypernet, Preference, WeightHypernet};
use crate::error::{Error, Result};
use crate::numkernel::{AdamState, Graph, Rng, Tensor, Var};
use crate::objectives::{
    dichotomize, gumbel_softmax_on_graph, regularizer_on_graph, routing_noise, task_loss_on_graph, LossWeights,
    RegularizerVars, TaskAffinity,
};
use crate::searchspace::{p_use_graph, soft_outputs, AnchorNet, DeltaVars};

/// Everything random in one training step.
#[derive(Debug, Clone)]
pub struct StepSample {
    pub pref: Preference,
    /// Gumbel noise, one `N × N` tensor per block.
    pub noise: Vec<Tensor>,
    pub x: Tensor,
    pub targets: Vec<Tensor>,
}

impl StepSample {
    pub fn draw(rng: &mut Rng, config: &TrainConfig, anchor: &AnchorNet, data: &TaskDataset) -> Result<Self> {
        let n = anchor.tasks();
        let pref = sample_preference(rng, &config.eta_for(n))?;
        let noise = routing_noise(rng, anchor.layers(), n);
        let idx = batch_indices(rng, data.train.len(), config.batch_size);
        let (x, targets) = data.train.batch(&idx);
        Ok(Self { pref, noise, x, targets })
    }
}

/// Graph nodes of one stage-1 objective evaluation.
#[derive(Debug, Clone)]
pub struct StageTerms {
    /// `L_task + Ω`
    pub total: Var,
    pub task: Var,
    pub losses: Vec<Var>,
    pub reg: RegularizerVars,
    pub nu: Vec<Var>,
}

fn task_terms(
    g: &Graph,
    anchor: &AnchorNet,
    nu: &[Var],
    sample: &StepSample,
    deltas: Option<&DeltaVars>,
    weights: &LossWeights,
) -> Result<(Var, Vec<Var>)> {
    let x = g.constant(sample.x.clone());
    let outs = soft_outputs(g, anchor, nu, x, deltas)?;
    let losses = outs
        .iter()
        .zip(&sample.targets)
        .map(|(&o, y)| g.mse(o, g.constant(y.clone())))
        .collect::<Result<Vec<_>>>()?;
    let task = task_loss_on_graph(g, &sample.pref, &weights.w, &losses)?;
    Ok((task, losses))
}

/// Stage-1 objective `L_task + Ω` for the edge hypernet bound to `vars`.
#[allow(clippy::too_many_arguments)]
pub fn stage1_terms(
    g: &Graph,
    edge: &EdgeHypernet,
    vars: &[Var],
    anchor: &AnchorNet,
    affinity: &Tensor,
    sample: &StepSample,
    zeta: f64,
    weights: &LossWeights,
    tau: f64,
) -> Result<StageTerms> {
    let logits = edge.logits_on_graph(g, vars, &sample.pref)?;
    let nu = gumbel_softmax_on_graph(g, &logits, &sample.noise, zeta)?;
    let (task, losses) = task_terms(g, anchor, &nu, sample, None, weights)?;
    let p_use = p_use_graph(g, &nu, anchor.tasks())?;
    let dich = dichotomize(&sample.pref, tau)?;
    let reg = regularizer_on_graph(g, &sample.pref, &dich, &nu, affinity, &p_use, weights)?;
    let total = g.add(task, reg.omega)?;
    Ok(StageTerms {
        total,
        task,
        losses,
        reg,
        nu,
    })
}

fn diverged(stage: &'static str, step: usize, e: impl std::fmt::Display) -> Error {
    Error::Diverged {
        stage,
        step,
        detail: e.to_string(),
    }
}

fn check_data(anchor: &AnchorNet, data: &TaskDataset) -> Result<()> {
    if data.spec.tasks != anchor.tasks() || data.train.inputs.cols() != anchor.config().input_dim {
        return Err(Error::shape("train", "dataset does not match the anchor"));
    }
    Ok(())
}

/// Stage 1: only the edge hypernet's parameters are updated.
pub fn train_edge(
    config: &TrainConfig,
    anchor: &AnchorNet,
    affinity: &TaskAffinity,
    data: &TaskDataset,
) -> Result<(EdgeHypernet, TrainReport)> {
    let n = anchor.tasks();
    config.validate(n)?;
    check_data(anchor, data)?;
    if affinity.tasks() != n {
        return Err(Error::shape("train_edge", "affinity does not match the anchor"));
    }
    let started = Instant::now();
    let root = Rng::new(config.seed).substream("edge");
    let mut edge = EdgeHypernet::new(n, anchor.layers(), config.edge_diag_bias, &mut root.substream("init"));
    let weights = config.loss_weights(n);
    let tau = config.tau_for(n);
    let aff = affinity.tensor();
    let mut adam = AdamState::new(edge.params().tensors(), config.learning_rate);
    let mut records = Vec::with_capacity(config.edge_steps);
    for step in 0..config.edge_steps {
        let mut rng = root.substream_at("step", step as u64);
        let sample = StepSample::draw(&mut rng, config, anchor, data)?;
        let zeta = temperature(step, config);
        let g = Graph::new();
        let vars = edge.params().as_params(&g);
        let terms = stage1_terms(&g, &edge, &vars, anchor, &aff, &sample, zeta, &weights, tau)
            .map_err(|e| diverged("edge", step, e))?;
        let grads = g.backward(terms.total).map_err(|e| diverged("edge", step, e))?;
        let grads: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
        adam.learning_rate = lr_at(step, config.edge_steps, config, config.learning_rate);
        adam.step(edge.params_mut().tensors_mut(), &grads)
            .map_err(|e| diverged("edge", step, e))?;
        records.push(StepRecord {
            step,
            task_loss: g.item(terms.task),
            active: g.item(terms.reg.active),
            inactive: g.item(terms.reg.inactive),
            omega: g.item(terms.reg.omega),
            zeta,
            c: sample.pref.c(),
            r: sample.pref.r().to_vec(),
        });
    }
    let report = TrainReport {
        stage: "edge",
        records,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        fingerprint: edge.params().fingerprint(),
    };
    Ok((edge, report))
}

/// Task loss of the stage-2 objective for the weight hypernet bound to
/// `vars`; the edge hypernet is frozen.
#[allow(clippy::too_many_arguments)]
pub fn stage2_terms(
    g: &Graph,
    weight: &WeightHypernet,
    vars: &[Var],
    edge: &EdgeHypernet,
    anchor: &AnchorNet,
    sample: &StepSample,
    zeta: f64,
    weights: &LossWeights,
) -> Result<(Var, Vec<Var>, Vec<Var>)> {
    let edge_vars = edge.params().as_constants(g);
    let logits = edge.logits_on_graph(g, &edge_vars, &sample.pref)?;
    let nu = gumbel_softmax_on_graph(g, &logits, &sample.noise, zeta)?;
    let deltas = weight.deltas_on_graph(g, vars, &sample.pref)?;
    let (task, losses) = task_terms(g, anchor, &nu, sample, Some(&deltas), weights)?;
    Ok((task, losses, nu))
}

/// Stage 2: only the weight hypernet's parameters are updated; the
/// temperature schedule continues from where stage 1 stopped.
pub fn train_weight(
    config: &TrainConfig,
    anchor: &AnchorNet,
    edge: &EdgeHypernet,
    data: &TaskDataset,
) -> Result<(WeightHypernet, TrainReport)> {
    let n = anchor.tasks();
    config.validate(n)?;
    check_data(anchor, data)?;
    let started = Instant::now();
    let root = Rng::new(config.seed).substream("weight");
    let mut weight = WeightHypernet::new(anchor, &mut root.substream("init"));
    let weights = config.loss_weights(n);
    let mut adam = AdamState::new(weight.params().tensors(), config.learning_rate);
    let mut records = Vec::with_capacity(config.weight_steps);
    for step in 0..config.weight_steps {
        let mut rng = root.substream_at("step", step as u64);
        let sample = StepSample::draw(&mut rng, config, anchor, data)?;
        let zeta = temperature(config.edge_steps + step, config);
        let g = Graph::new();
        let vars = weight.params().as_params(&g);
        let (task, _, _) = stage2_terms(&g, &weight, &vars, edge, anchor, &sample, zeta, &weights)
            .map_err(|e| diverged("weight", step, e))?;
        let grads = g.backward(task).map_err(|e| diverged("weight", step, e))?;
        let grads: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
        adam.learning_rate = lr_at(step, config.weight_steps, config, config.learning_rate);
        adam.step(weight.params_mut().tensors_mut(), &grads)
            .map_err(|e| diverged("weight", step, e))?;
        records.push(StepRecord {
            step,
            task_loss: g.item(task),
            // this stage carries no regularizer
            active: 0.0,
            inactive: 0.0,
            omega: 0.0,
            zeta,
            c: sample.pref.c(),
            r: sample.pref.r().to_vec(),
        });
    }
    let report = TrainReport {
        stage: "weight",
        records,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        fingerprint: weight.params().fingerprint(),
    };
    Ok((weight, report))
}
