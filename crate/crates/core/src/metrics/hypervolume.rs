use serde::Serialize;

use crate::error::{Error, Result};
use crate::numkernel::Rng;

/// Loss vectors (minimized) and the reference point bounding them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossFront {
    pub points: Vec<Vec<f64>>,
    pub reference: Vec<f64>,
}

impl LossFront {
    pub fn new(points: Vec<Vec<f64>>, reference: Vec<f64>) -> Result<Self> {
        let d = reference.len();
        if d == 0 {
            return Err(Error::invalid("reference point is empty"));
        }
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::shape("loss_front", "points and reference differ in dimension"));
        }
        if points.iter().flatten().chain(&reference).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "loss_front" });
        }
        Ok(Self { points, reference })
    }

    pub fn dims(&self) -> usize {
        self.reference.len()
    }

    /// Points strictly below the reference in every coordinate.
    fn inside(&self) -> Vec<Vec<f64>> {
        self.points
            .iter()
            .filter(|p| p.iter().zip(&self.reference).all(|(v, r)| v < r))
            .cloned()
            .collect()
    }
}

/// Volume dominated by `points` below `reference`, by sweeping the last
/// coordinate and recursing on the rest.
fn sweep(points: &mut [Vec<f64>], reference: &[f64]) -> f64 {
    let d = reference.len();
    if points.is_empty() {
        return 0.0;
    }
    if d == 1 {
        let best = points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        return reference[0] - best;
    }
    points.sort_by(|a, b| a[d - 1].total_cmp(&b[d - 1]));
    let mut volume = 0.0;
    for i in 0..points.len() {
        let top = if i + 1 < points.len() { points[i + 1][d - 1] } else { reference[d - 1] };
        let height = top - points[i][d - 1];
        if height > 0.0 {
            let mut slab: Vec<Vec<f64>> = points[..=i].iter().map(|p| p[..d - 1].to_vec()).collect();
            volume += height * sweep(&mut slab, &reference[..d - 1]);
        }
    }
    volume
}

/// Exact hypervolume for up to four objectives.
pub fn hypervolume(front: &LossFront) -> Result<f64> {
    if front.dims() > 4 {
        return Err(Error::invalid(format!(
            "exact hypervolume supports at most 4 objectives, got {}; use hypervolume_mc",
            front.dims()
        )));
    }
    Ok(sweep(&mut front.inside(), &front.reference))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// Monte-Carlo hypervolume: uniform samples in the box spanned by the
/// componentwise minimum of the points and the reference.
pub fn hypervolume_mc(front: &LossFront, samples: usize, rng: &mut Rng) -> Result<McEstimate> {
    if samples < 10_000 {
        return Err(Error::invalid("Monte-Carlo hypervolume needs at least 10^4 samples"));
    }
    let points = front.inside();
    let zero = McEstimate { value: 0.0, stderr: 0.0 };
    if points.is_empty() {
        return Ok(zero);
    }
    let d = front.dims();
    let lower: Vec<f64> = (0..d)
        .map(|k| points.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min))
        .collect();
    let extent: Vec<f64> = lower.iter().zip(&front.reference).map(|(l, r)| r - l).collect();
    let box_volume: f64 = extent.iter().product();
    if !(box_volume > 0.0) {
        return Ok(zero);
    }
    let mut hits = 0usize;
    let mut x = vec![0.0; d];
    for _ in 0..samples {
        for k in 0..d {
            x[k] = lower[k] + extent[k] * rng.uniform();
        }
        if points.iter().any(|p| p.iter().zip(&x).all(|(a, b)| a <= b)) {
            hits += 1;
        }
    }
    let frac = hits as f64 / samples as f64;
    Ok(McEstimate {
        value: frac * box_volume,
        stderr: box_volume * (frac * (1.0 - frac) / samples as f64).sqrt(),
    })
}
