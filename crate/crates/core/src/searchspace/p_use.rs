//! Probability that each anchor node is used by a sampled tree.
//!
//! Children pick parents independently, child `(b + 1, k)` choosing
//! `(b, i)` with probability `nu[b][k][i]`; a node is used when some used
//! child picks it, and every top node is used. Usage events of siblings are
//! correlated through shared ancestors' choices, so the exact marginal is
//! obtained by carrying the distribution of the *set* of used nodes down
//! the layers ([`p_use_graph`]). The product recurrence
//! `1 - Π_k (1 - P(b + 1, k) · nu[b][k][i])` treats those events as
//! independent; it is exact for the block under the heads and kept as
//! [`p_use_recurrence`].

use log::warn;

use super::BranchSample;
use crate::error::{Error, Result};
use crate::numkernel::{Graph, Var};

/// Largest task count handled by the subset dynamic program (its state
/// space has `2^N` entries per layer).
pub const EXACT_P_USE_MAX_TASKS: usize = 10;

fn element_grid(g: &Graph, nu_blocks: &[Var], n: usize) -> Result<Vec<Vec<Vec<Var>>>> {
    nu_blocks
        .iter()
        .map(|&blk| {
            (0..n)
                .map(|k| (0..n).map(|i| g.element(blk, k * n + i)).collect())
                .collect()
        })
        .collect()
}

fn accumulate(g: &Graph, slot: &mut Option<Var>, term: Var) -> Result<()> {
    *slot = Some(match *slot {
        Some(acc) => g.add(acc, term)?,
        None => term,
    });
    Ok(())
}

/// Exact usage marginals on a graph. `nu_blocks[b]` is the `N × N` routing
/// block `b` (row = child). Returns `(L + 1) × N` scalar nodes.
pub fn p_use_graph(g: &Graph, nu_blocks: &[Var], tasks: usize) -> Result<Vec<Vec<Var>>> {
    if tasks > EXACT_P_USE_MAX_TASKS {
        warn!("{tasks} tasks exceed the exact usage DP limit; using the product recurrence");
        return p_use_recurrence_graph(g, nu_blocks, tasks);
    }
    let layers = nu_blocks.len();
    let nu = element_grid(g, nu_blocks, tasks)?;
    let states = 1usize << tasks;
    let one = g.scalar(1.0);
    let zero = g.scalar(0.0);

    let mut p_use = vec![Vec::new(); layers + 1];
    p_use[layers] = vec![one; tasks];
    // dist[S] = P(set of used nodes in the current layer == S)
    let mut dist: Vec<Option<Var>> = vec![None; states];
    dist[states - 1] = Some(one);

    for b in (0..layers).rev() {
        let mut next: Vec<Option<Var>> = vec![None; states];
        for (used, p_used) in dist.iter().enumerate() {
            let Some(p_used) = *p_used else { continue };
            // Distribution of the union of parents picked by the used children.
            let mut local: Vec<Option<Var>> = vec![None; states];
            local[0] = Some(one);
            for k in (0..tasks).filter(|k| used >> k & 1 == 1) {
                let mut stepped: Vec<Option<Var>> = vec![None; states];
                for (picked, q) in local.iter().enumerate() {
                    let Some(q) = *q else { continue };
                    for i in 0..tasks {
                        let term = g.mul(q, nu[b][k][i])?;
                        accumulate(g, &mut stepped[picked | 1 << i], term)?;
                    }
                }
                local = stepped;
            }
            for (picked, q) in local.iter().enumerate() {
                if let Some(q) = *q {
                    let term = g.mul(p_used, q)?;
                    accumulate(g, &mut next[picked], term)?;
                }
            }
        }
        p_use[b] = (0..tasks)
            .map(|i| {
                let mut total = None;
                for (set, p) in next.iter().enumerate() {
                    if let (true, Some(p)) = (set >> i & 1 == 1, *p) {
                        accumulate(g, &mut total, p)?;
                    }
                }
                Ok(total.unwrap_or(zero))
            })
            .collect::<Result<_>>()?;
        dist = next;
    }
    Ok(p_use)
}

/// Product recurrence `P(b, i) = 1 - Π_k (1 - P(b + 1, k) · nu[b][k][i])`
/// with `P(L, ·) = 1`, on a graph.
pub fn p_use_recurrence_graph(g: &Graph, nu_blocks: &[Var], tasks: usize) -> Result<Vec<Vec<Var>>> {
    let layers = nu_blocks.len();
    let nu = element_grid(g, nu_blocks, tasks)?;
    let one = g.scalar(1.0);
    let mut p_use = vec![Vec::new(); layers + 1];
    p_use[layers] = vec![one; tasks];
    for b in (0..layers).rev() {
        p_use[b] = (0..tasks)
            .map(|i| {
                let mut none = one;
                for k in 0..tasks {
                    let picks = g.mul(p_use[b + 1][k], nu[b][k][i])?;
                    none = g.mul(none, g.one_minus(picks)?)?;
                }
                g.one_minus(none)
            })
            .collect::<Result<_>>()?;
    }
    Ok(p_use)
}

fn evaluate(
    nu: &BranchSample,
    f: impl Fn(&Graph, &[Var], usize) -> Result<Vec<Vec<Var>>>,
) -> Result<Vec<Vec<f64>>> {
    let g = Graph::new();
    let blocks: Vec<Var> = (0..nu.layers()).map(|b| g.constant(nu.block_tensor(b))).collect();
    let p = f(&g, &blocks, nu.tasks())?;
    if let Some(op) = g.failure() {
        return Err(Error::NonFinite { op });
    }
    Ok(p.iter().map(|row| row.iter().map(|&v| g.item(v)).collect()).collect())
}

/// Exact usage marginals, `(L + 1) × N`, row `L` all ones.
pub fn compute_p_use(nu: &BranchSample) -> Vec<Vec<f64>> {
    evaluate(nu, p_use_graph).expect("usage DP over a valid sample is well formed")
}

/// The product recurrence evaluated on plain values.
pub fn p_use_recurrence(nu: &BranchSample) -> Vec<Vec<f64>> {
    evaluate(nu, p_use_recurrence_graph).expect("recurrence over a valid sample is well formed")
}
