use std::fmt::Write as _;

use serde::Serialize;

use super::{hypervolume, uniformity, LossFront};
use crate::benchsynth::SplitData;
use crate::controller::{predict, EdgeHypernet, Preference, WeightHypernet};
use crate::error::{Error, Result};
use crate::numkernel::{kernel, Rng};
use crate::searchspace::{resource_usage, AnchorNet};

/// Simplex points (corners, the centre, then `Dirichlet(eta)` draws up to
/// `points`) crossed with every cost value.
pub fn default_grid(tasks: usize, points: usize, eta: f64, seed: u64, costs: &[f64]) -> Result<Vec<Preference>> {
    if tasks == 0 || costs.is_empty() {
        return Err(Error::invalid("grid needs tasks and cost values"));
    }
    let mut simplex: Vec<Vec<f64>> = (0..tasks)
        .map(|k| (0..tasks).map(|j| if j == k { 1.0 } else { 0.0 }).collect())
        .collect();
    if tasks > 1 {
        simplex.push(vec![1.0 / tasks as f64; tasks]);
    }
    let mut rng = Rng::new(seed).substream("grid");
    while simplex.len() < points {
        simplex.push(rng.sample_dirichlet(&vec![eta; tasks])?);
    }
    let mut grid = Vec::with_capacity(simplex.len() * costs.len());
    for &c in costs {
        for r in &simplex {
            grid.push(Preference::new(r.clone(), c)?);
        }
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub pref: Preference,
    pub resource_ratio: f64,
    pub losses: Vec<f64>,
    pub tree_signature: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostSummary {
    pub c: f64,
    pub count: usize,
    pub hv: f64,
    pub mean_uniformity: f64,
    pub mean_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub reference: Vec<f64>,
    pub hv: f64,
    pub mean_uniformity: f64,
    pub mean_ratio: f64,
    pub per_c: Vec<CostSummary>,
}

fn summarize(rows: &[&SweepRow], reference: &[f64]) -> Result<(f64, f64, f64)> {
    let front = LossFront::new(rows.iter().map(|r| r.losses.clone()).collect(), reference.to_vec())?;
    let hv = hypervolume(&front)?;
    let mut mu = 0.0;
    for r in rows {
        mu += uniformity(&r.pref, &r.losses)?;
    }
    let k = rows.len().max(1) as f64;
    let ratio = rows.iter().map(|r| r.resource_ratio).sum::<f64>() / k;
    Ok((hv, mu / k, ratio))
}

/// Predicts a sub-network for every preference and scores it on `data`.
pub fn preference_sweep(
    anchor: &AnchorNet,
    edge: &EdgeHypernet,
    weight: Option<&WeightHypernet>,
    grid: &[Preference],
    data: &SplitData,
    reference: &[f64],
) -> Result<SweepResult> {
    if reference.len() != anchor.tasks() {
        return Err(Error::shape("preference_sweep", "reference needs one entry per task"));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for pref in grid {
        let (tree, model) = predict(edge, weight, anchor, pref)?;
        let outputs = model.forward(&data.inputs)?;
        let losses = outputs
            .iter()
            .zip(&data.targets)
            .map(|(o, y)| kernel::mse(o, y))
            .collect::<Result<Vec<_>>>()?;
        rows.push(SweepRow {
            pref: pref.clone(),
            resource_ratio: resource_usage(anchor, &tree).ratio_to_anchor,
            losses,
            tree_signature: tree.signature(),
        });
    }
    let all: Vec<&SweepRow> = rows.iter().collect();
    let (hv, mean_uniformity, mean_ratio) = summarize(&all, reference)?;
    let mut costs: Vec<f64> = grid.iter().map(|p| p.c()).collect();
    costs.sort_by(f64::total_cmp);
    costs.dedup();
    let per_c = costs
        .into_iter()
        .map(|c| {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.pref.c() == c).collect();
            let (hv, mean_uniformity, mean_ratio) = summarize(&group, reference)?;
            Ok(CostSummary {
                c,
                count: group.len(),
                hv,
                mean_uniformity,
                mean_ratio,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        rows,
        reference: reference.to_vec(),
        hv,
        mean_uniformity,
        mean_ratio,
        per_c,
    })
}

impl SweepResult {
    /// `pref_1..N, c, resource_ratio, loss_1..N, tree_signature`
    pub fn to_csv(&self) -> String {
        let n = self.reference.len();
        let mut out = String::new();
        let prefs: Vec<String> = (1..=n).map(|i| format!("pref_{i}")).collect();
        let losses: Vec<String> = (1..=n).map(|i| format!("loss_{i}")).collect();
        writeln!(out, "{},c,resource_ratio,{},tree_signature", prefs.join(","), losses.join(","))
            .expect("writing to a string");
        for row in &self.rows {
            let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
            writeln!(
                out,
                "{},{},{},{},{}",
                join(row.pref.r()),
                row.pref.c(),
                row.resource_ratio,
                join(&row.losses),
                row.tree_signature
            )
            .expect("writing to a string");
        }
        out
    }
}
