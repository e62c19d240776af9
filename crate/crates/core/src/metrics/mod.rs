//! Evaluation metrics and brute-force oracles.

mod hypervolume;
mod sweep;

pub use hypervolume::{hypervolume, hypervolume_mc, LossFront, McEstimate};
pub use sweep::{default_grid, preference_sweep, CostSummary, SweepResult, SweepRow};

use crate::controller::Preference;
use crate::error::{Error, Result};
use crate::searchspace::{BranchSample, TreeArchitecture};

/// Largest enumeration accepted by the oracles.
pub const ENUMERATION_CAP: u128 = 1_000_000;

/// `μ = 1 - KL(L̂ ‖ uniform)` with `L̂_j = r_j L_j / Σ_i r_i L_i`, natural log.
pub fn uniformity(pref: &Preference, losses: &[f64]) -> Result<f64> {
    if losses.len() != pref.tasks() {
        return Err(Error::shape("uniformity", "one loss per task"));
    }
    let weighted: Vec<f64> = pref.r().iter().zip(losses).map(|(r, l)| r * l).collect();
    let total: f64 = weighted.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::invalid("preference-weighted losses must have positive finite mass"));
    }
    let n = losses.len() as f64;
    let kl: f64 = weighted
        .iter()
        .map(|w| {
            let p = w / total;
            p * (p.max(1e-12) * n).ln()
        })
        .sum();
    Ok(1.0 - kl)
}

fn assignment_count(tasks: usize, layers: usize) -> Result<u128> {
    let count = (tasks as u128)
        .checked_pow((tasks * layers) as u32)
        .unwrap_or(u128::MAX);
    if count > ENUMERATION_CAP {
        return Err(Error::TooLarge {
            count,
            cap: ENUMERATION_CAP,
        });
    }
    Ok(count)
}

/// Calls `visit` with every parent assignment, as `parents[block][child]`.
fn for_each_assignment(tasks: usize, layers: usize, mut visit: impl FnMut(&[Vec<usize>])) -> Result<()> {
    let count = assignment_count(tasks, layers)?;
    let mut parents = vec![vec![0usize; tasks]; layers];
    for code in 0..count {
        let mut rest = code;
        for slot in parents.iter_mut().flatten() {
            *slot = (rest % tasks as u128) as usize;
            rest /= tasks as u128;
        }
        visit(&parents);
    }
    Ok(())
}

/// Every tree over an `N`-stream anchor with `L` branching blocks.
pub fn enumerate_trees(tasks: usize, layers: usize) -> Result<Vec<TreeArchitecture>> {
    if tasks == 0 || layers == 0 {
        return Err(Error::invalid("enumeration needs at least one task and one block"));
    }
    let mut out = Vec::new();
    for_each_assignment(tasks, layers, |p| {
        out.push(TreeArchitecture::new(tasks, p.to_vec()).expect("enumerated parents are in range"));
    })?;
    Ok(out)
}

/// Exact usage marginals by summing over every parent assignment.
pub fn p_use_oracle(nu: &BranchSample) -> Result<Vec<Vec<f64>>> {
    let (n, layers) = (nu.tasks(), nu.layers());
    let mut marginals = vec![vec![0.0; n]; layers + 1];
    let mut used = vec![vec![false; n]; layers + 1];
    for_each_assignment(n, layers, |parents| {
        let mut prob = 1.0;
        for (b, row) in parents.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                prob *= nu.get(b, j, p);
            }
        }
        if prob == 0.0 {
            return;
        }
        for layer in used.iter_mut() {
            layer.fill(false);
        }
        used[layers].fill(true);
        for b in (0..layers).rev() {
            for j in 0..n {
                if used[b + 1][j] {
                    used[b][parents[b][j]] = true;
                }
            }
        }
        for (m, u) in marginals.iter_mut().flatten().zip(used.iter().flatten()) {
            if *u {
                *m += prob;
            }
        }
    })?;
    Ok(marginals)
}

/// Central differences `(f(x + h e_k) - f(x - h e_k)) / 2h` per coordinate.
pub fn finite_diff(f: impl Fn(&[f64]) -> f64, point: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut x = point.to_vec();
    (0..point.len())
        .map(|k| {
            x[k] = point[k] + h;
            let up = f(&x);
            x[k] = point[k] - h;
            let down = f(&x);
            x[k] = point[k];
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite { op: "finite_diff" });
            }
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

#[cfg(test)]
mod tests;
