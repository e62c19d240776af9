use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numkernel::{kernel, Tensor};
use crate::searchspace::{stream_features, AnchorNet};

/// Task affinity from representational similarity of the anchor streams,
/// with the per-layer intermediates kept for inspection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskAffinity {
    /// `N × N`, values in `[0, 1]`, unit diagonal.
    pub matrix: Vec<Vec<f64>>,
    /// Probe count `K`.
    pub samples: usize,
    /// `similarity[layer][task]`: `K × K` cosine similarities between probes.
    #[serde(skip)]
    pub similarity: Vec<Vec<Tensor>>,
    /// `dissimilarity[layer]`: `N × N` Frobenius distances.
    pub dissimilarity: Vec<Vec<Vec<f64>>>,
    /// Row-wise min-max normalized dissimilarities.
    pub normalized: Vec<Vec<Vec<f64>>>,
}

impl TaskAffinity {
    pub fn tasks(&self) -> usize {
        self.matrix.len()
    }

    pub fn tensor(&self) -> Tensor {
        let n = self.tasks();
        Tensor::matrix(n, n, self.matrix.iter().flatten().copied().collect()).expect("square, non-empty")
    }

    /// Header of task names, then one row of decimals per task.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = names.join(",");
        out.push('\n');
        for row in &self.matrix {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Rebuilds an affinity from a stored matrix (intermediates are not kept).
    pub fn from_matrix(matrix: Vec<Vec<f64>>, samples: usize) -> Result<Self> {
        let n = matrix.len();
        if n == 0 || matrix.iter().any(|r| r.len() != n) {
            return Err(Error::shape("affinity", "matrix must be square"));
        }
        if matrix.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("affinity entries must lie in [0, 1]"));
        }
        Ok(Self {
            matrix,
            samples,
            similarity: Vec::new(),
            dissimilarity: Vec::new(),
            normalized: Vec::new(),
        })
    }
}

/// `K × K` cosine similarities between the rows of `f`. Zero rows get zero
/// similarity to everything.
fn cosine_matrix(f: &Tensor) -> Tensor {
    let norms: Vec<f64> = (0..f.rows())
        .map(|k| f.row_slice(k).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if norms.iter().any(|&n| n == 0.0) {
        warn!("zero feature vector in affinity probes; its similarities are set to 0");
    }
    let gram = kernel::matmul_nt(f, f).expect("f times its transpose");
    let k = f.rows();
    let mut s = gram;
    for a in 0..k {
        for b in 0..k {
            let denom = norms[a] * norms[b];
            let v = &mut s.data_mut()[a * k + b];
            *v = if denom == 0.0 { 0.0 } else { *v / denom };
        }
    }
    s
}

fn frobenius(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Representational-similarity affinity over `probes` (`K × input_dim`).
pub fn rsa_affinity(anchor: &AnchorNet, probes: &Tensor) -> Result<TaskAffinity> {
    let k = probes.rows();
    if k < 2 {
        return Err(Error::invalid("affinity needs at least two probes"));
    }
    let n = anchor.tasks();
    let features = (0..n)
        .map(|i| stream_features(anchor, i, probes))
        .collect::<Result<Vec<_>>>()?;
    let node_layers = anchor.layers() + 1;
    let mut similarity = Vec::with_capacity(node_layers);
    let mut dissimilarity = Vec::with_capacity(node_layers);
    let mut normalized = Vec::with_capacity(node_layers);
    let mut total = vec![vec![0.0; n]; n];
    for l in 0..node_layers {
        let s: Vec<Tensor> = features.iter().map(|f| cosine_matrix(&f[l])).collect();
        let d: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| frobenius(&s[i], &s[j])).collect())
            .collect();
        let d_hat: Vec<Vec<f64>> = d
            .iter()
            .map(|row| {
                let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if hi > lo {
                    row.iter().map(|v| (v - lo) / (hi - lo)).collect()
                } else {
                    vec![0.0; n]
                }
            })
            .collect();
        for (acc, row) in total.iter_mut().zip(&d_hat) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += 1.0 - v;
            }
        }
        similarity.push(s);
        dissimilarity.push(d);
        normalized.push(d_hat);
    }
    let matrix = total
        .into_iter()
        .map(|row| row.into_iter().map(|v| v / node_layers as f64).collect())
        .collect();
    Ok(TaskAffinity {
        matrix,
        samples: k,
        similarity,
        dissimilarity,
        normalized,
    })
}
