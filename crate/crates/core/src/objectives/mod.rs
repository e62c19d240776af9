//! Scalarized task loss, task dichotomy, Gumbel-Softmax routing samples,
//! the branching regularizer and representational-similarity task affinity.

mod affinity;

pub use affinity::{rsa_affinity, TaskAffinity};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::controller::Preference;
use crate::error::{Error, Result};
use crate::numkernel::{kernel, Graph, Rng, Tensor, Var};
use crate::searchspace::{BranchSample, BranchingLogits};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Per-task loss scale factors.
    pub w: Vec<f64>,
    pub lambda_active: f64,
    pub lambda_inactive: f64,
}

impl LossWeights {
    pub fn new(tasks: usize) -> Self {
        Self {
            w: vec![1.0; tasks],
            lambda_active: 1.0,
            lambda_inactive: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::invalid("loss scale factors must be positive"));
        }
        if !(self.lambda_active >= 0.0) || !(self.lambda_inactive >= 0.0) {
            return Err(Error::invalid("regularizer weights must be nonnegative"));
        }
        Ok(())
    }
}

fn check_task_loss_inputs(pref: &Preference, w: &[f64], n: usize) -> Result<()> {
    if pref.tasks() != n || w.len() != n {
        return Err(Error::shape("task_loss", format!("{} weights, {} scales, {n} losses", pref.tasks(), w.len())));
    }
    Ok(())
}

/// `Σ_i r_i w_i L_i`
pub fn task_loss(pref: &Preference, w: &[f64], losses: &[f64]) -> Result<f64> {
    check_task_loss_inputs(pref, w, losses.len())?;
    if let Some(l) = losses.iter().find(|&&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(Error::invalid(format!("task loss {l} is negative or not finite")));
    }
    Ok(pref.r().iter().zip(w).zip(losses).map(|((r, w), l)| r * w * l).sum())
}

/// Graph form of [`task_loss`] over 1×1 loss nodes.
pub fn task_loss_on_graph(g: &Graph, pref: &Preference, w: &[f64], losses: &[Var]) -> Result<Var> {
    check_task_loss_inputs(pref, w, losses.len())?;
    let terms = losses
        .iter()
        .zip(pref.r().iter().zip(w))
        .map(|(&l, (r, w))| g.scale(l, r * w))
        .collect::<Result<Vec<_>>>()?;
    Ok(g.add_all(&terms)?.expect("at least one task"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskDichotomy {
    pub active: Vec<usize>,
    pub inactive: Vec<usize>,
    pub tau: f64,
}

/// Tasks with `r_i ≥ τ` are active, the rest inactive.
pub fn dichotomize(pref: &Preference, tau: f64) -> Result<TaskDichotomy> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("threshold {tau} outside (0, 1)")));
    }
    let (active, inactive) = (0..pref.tasks()).partition(|&i| pref.r()[i] >= tau);
    Ok(TaskDichotomy { active, inactive, tau })
}

/// `0.6 / N`
pub fn default_tau(tasks: usize) -> f64 {
    0.6 / tasks as f64
}

fn check_zeta(zeta: f64) -> Result<()> {
    if !(zeta > 0.0) || !zeta.is_finite() {
        return Err(Error::invalid(format!("temperature {zeta} must be positive")));
    }
    Ok(())
}

/// `softmax((α + G) / ζ)` row-wise for one `N × N` block, on a graph, with
/// the Gumbel noise supplied by the caller.
pub fn gumbel_softmax_on_graph(g: &Graph, logits: &[Var], noise: &[Tensor], zeta: f64) -> Result<Vec<Var>> {
    check_zeta(zeta)?;
    if logits.len() != noise.len() {
        return Err(Error::shape("gumbel_softmax", "one noise tensor per block"));
    }
    logits
        .iter()
        .zip(noise)
        .map(|(&a, n)| {
            let perturbed = g.add(a, g.constant(n.clone()))?;
            g.softmax_rows(g.scale(perturbed, 1.0 / zeta)?)
        })
        .collect()
}

/// Plain evaluation with explicit noise, one `N × N` tensor per block.
pub fn gumbel_softmax_with_noise(alpha: &BranchingLogits, noise: &[Tensor], zeta: f64) -> Result<BranchSample> {
    check_zeta(zeta)?;
    if noise.len() != alpha.layers() {
        return Err(Error::shape("gumbel_softmax", "one noise tensor per block"));
    }
    let blocks = (0..alpha.layers())
        .map(|b| {
            let perturbed = kernel::add(&alpha.block_tensor(b), &noise[b])?;
            Ok(kernel::softmax_rows(&kernel::scale(&perturbed, 1.0 / zeta)))
        })
        .collect::<Result<Vec<_>>>()?;
    BranchSample::from_blocks(&blocks)
}

/// Draws Gumbel noise for every block of an `L × N × N` routing tensor.
pub fn routing_noise(rng: &mut Rng, layers: usize, tasks: usize) -> Vec<Tensor> {
    (0..layers).map(|_| rng.sample_gumbel(&[tasks, tasks])).collect()
}

pub fn gumbel_softmax(alpha: &BranchingLogits, zeta: f64, rng: &mut Rng) -> Result<BranchSample> {
    check_zeta(zeta)?;
    let noise = routing_noise(rng, alpha.layers(), alpha.tasks());
    gumbel_softmax_with_noise(alpha, &noise, zeta)
}

fn row_distance(g: &Graph, block: Var, n: usize, i: usize, j: usize) -> Result<Var> {
    g.squared_distance(g.slice(block, i * n, n)?, g.slice(block, j * n, n)?)
}

/// Active loss on a graph. `nu` holds one `N × N` node per block, `p_use`
/// is `(L + 1) × N` and `affinity` is `N × N`. Block `b` feeds node layer
/// `b + 1` and carries depth weight `(L - 1 - b) / L`.
pub fn active_loss_on_graph(
    g: &Graph,
    nu: &[Var],
    dich: &TaskDichotomy,
    affinity: &Tensor,
    p_use: &[Vec<Var>],
) -> Result<Var> {
    let layers = nu.len();
    let n = affinity.rows();
    if p_use.len() != layers + 1 {
        return Err(Error::shape("active_loss", "usage needs L + 1 rows"));
    }
    let mut terms = Vec::new();
    for (b, &block) in nu.iter().enumerate() {
        let depth = (layers - 1 - b) as f64 / layers as f64;
        if depth == 0.0 {
            continue;
        }
        for &i in &dich.active {
            for &j in dich.active.iter().filter(|&&j| j != i) {
                let d = row_distance(g, block, n, i, j)?;
                let usage = g.mul(p_use[b + 1][i], p_use[b + 1][j])?;
                terms.push(g.scale(g.mul(usage, d)?, depth * affinity.at(i, j))?);
            }
        }
    }
    Ok(g.add_all(&terms)?.unwrap_or_else(|| g.scalar(0.0)))
}

/// Inactive loss on a graph: every inactive row is pulled toward its
/// nearest active row. The minimum is taken on values and differentiated
/// through the selected term.
pub fn inactive_loss_on_graph(g: &Graph, nu: &[Var], dich: &TaskDichotomy, tasks: usize) -> Result<Var> {
    if dich.active.is_empty() {
        if !dich.inactive.is_empty() {
            warn!("no task reaches the threshold {}; inactive loss set to 0", dich.tau);
        }
        return Ok(g.scalar(0.0));
    }
    let mut terms = Vec::new();
    for &block in nu {
        for &j in &dich.inactive {
            let mut best: Option<(f64, Var)> = None;
            for &i in &dich.active {
                let d = row_distance(g, block, tasks, i, j)?;
                let v = g.item(d);
                if best.is_none_or(|(bv, _)| v < bv) {
                    best = Some((v, d));
                }
            }
            terms.extend(best.map(|(_, d)| d));
        }
    }
    Ok(g.add_all(&terms)?.unwrap_or_else(|| g.scalar(0.0)))
}

/// Regularizer terms as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct RegularizerVars {
    pub active: Var,
    pub inactive: Var,
    pub omega: Var,
}

/// `Ω = c · λ_A · L_active + λ_I · L_inactive`
pub fn regularizer_on_graph(
    g: &Graph,
    pref: &Preference,
    dich: &TaskDichotomy,
    nu: &[Var],
    affinity: &Tensor,
    p_use: &[Vec<Var>],
    weights: &LossWeights,
) -> Result<RegularizerVars> {
    let active = active_loss_on_graph(g, nu, dich, affinity, p_use)?;
    let inactive = inactive_loss_on_graph(g, nu, dich, pref.tasks())?;
    let omega = g.add(
        g.scale(active, pref.c() * weights.lambda_active)?,
        g.scale(inactive, weights.lambda_inactive)?,
    )?;
    Ok(RegularizerVars { active, inactive, omega })
}

/// Evaluated regularizer terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Regularizer {
    pub active: f64,
    pub inactive: f64,
    pub omega: f64,
}

fn lift_sample(g: &Graph, nu: &BranchSample) -> Vec<Var> {
    (0..nu.layers()).map(|b| g.constant(nu.block_tensor(b))).collect()
}

fn lift_usage(g: &Graph, p_use: &[Vec<f64>]) -> Vec<Vec<Var>> {
    p_use.iter().map(|row| row.iter().map(|&p| g.scalar(p)).collect()).collect()
}

pub fn active_loss(nu: &BranchSample, dich: &TaskDichotomy, affinity: &Tensor, p_use: &[Vec<f64>]) -> Result<f64> {
    let g = Graph::new();
    let v = active_loss_on_graph(&g, &lift_sample(&g, nu), dich, affinity, &lift_usage(&g, p_use))?;
    Ok(g.item(v))
}

pub fn inactive_loss(nu: &BranchSample, dich: &TaskDichotomy) -> Result<f64> {
    let g = Graph::new();
    let v = inactive_loss_on_graph(&g, &lift_sample(&g, nu), dich, nu.tasks())?;
    Ok(g.item(v))
}

pub fn regularizer(
    pref: &Preference,
    dich: &TaskDichotomy,
    nu: &BranchSample,
    affinity: &Tensor,
    p_use: &[Vec<f64>],
    weights: &LossWeights,
) -> Result<Regularizer> {
    let g = Graph::new();
    let r = regularizer_on_graph(&g, pref, dich, &lift_sample(&g, nu), affinity, &lift_usage(&g, p_use), weights)?;
    Ok(Regularizer {
        active: g.item(r.active),
        inactive: g.item(r.inactive),
        omega: g.item(r.omega),
    })
}
