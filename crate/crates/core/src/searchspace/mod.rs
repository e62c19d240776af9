//! The N-stream anchor network and the tree-structured routing space over it.
//!
//! Node layers are numbered `0..=L`. Branching block `b` (for `b` in
//! `0..L`) decides, for every child node `(b + 1, j)`, which parent
//! `(b, i)` feeds it. Layer-0 nodes read the shared input and task heads
//! sit on the layer-`L` node of their own stream.

mod forward;
mod p_use;
mod resource;
mod tree;

pub use forward::{forward_hard, forward_soft, soft_outputs, stream_features, DeltaVars, HardOutput};
pub use p_use::{compute_p_use, p_use_graph, p_use_recurrence, p_use_recurrence_graph, EXACT_P_USE_MAX_TASKS};
pub use resource::{resource_usage, ResourceReport};
pub use tree::{decode_architecture, CrossEdge, TreeArchitecture};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{ParamSet, Rng, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub tasks: usize,
    /// Number of branching blocks `L`; there are `L + 1` node layers.
    pub layers: usize,
    pub input_dim: usize,
    /// Channel count shared by every node.
    pub width: usize,
    pub output_dims: Vec<usize>,
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tasks == 0 || self.layers == 0 || self.input_dim == 0 || self.width == 0 {
            return Err(Error::invalid("anchor dimensions must be positive"));
        }
        if self.output_dims.len() != self.tasks || self.output_dims.contains(&0) {
            return Err(Error::invalid("one positive output dimension per task is required"));
        }
        Ok(())
    }

    pub fn node_layers(&self) -> usize {
        self.layers + 1
    }

    pub fn node_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.width
        }
    }
}

/// Affine map, normalization with frozen statistics, ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeBlock {
    pub weight: Tensor,
    pub bias: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub mean: Tensor,
    pub std: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorNet {
    config: AnchorConfig,
    /// `blocks[layer][stream]`
    blocks: Vec<Vec<NodeBlock>>,
    heads: Vec<Head>,
}

impl AnchorNet {
    pub fn new(config: AnchorConfig, blocks: Vec<Vec<NodeBlock>>, heads: Vec<Head>) -> Result<Self> {
        config.validate()?;
        if blocks.len() != config.node_layers() || blocks.iter().any(|l| l.len() != config.tasks) {
            return Err(Error::shape("anchor", "blocks must be (L + 1) x N"));
        }
        for (l, layer) in blocks.iter().enumerate() {
            for b in layer {
                let w = config.width;
                let ok = b.weight.shape() == [config.node_input_dim(l), w]
                    && [&b.bias, &b.gamma, &b.beta, &b.mean, &b.std]
                        .iter()
                        .all(|t| t.shape() == [1, w]);
                if !ok {
                    return Err(Error::shape("anchor", format!("node block at layer {l} has wrong shapes")));
                }
                if b.std.data().iter().any(|&s| !(s > 0.0)) {
                    return Err(Error::invalid("normalization std must be positive"));
                }
            }
        }
        if heads.len() != config.tasks {
            return Err(Error::shape("anchor", "one head per task"));
        }
        for (t, h) in heads.iter().enumerate() {
            let o = config.output_dims[t];
            if h.weight.shape() != [config.width, o] || h.bias.shape() != [1, o] {
                return Err(Error::shape("anchor", format!("head {t} has wrong shapes")));
            }
        }
        Ok(Self { config, blocks, heads })
    }

    /// He-initialized weights with identity normalization.
    pub fn random(config: AnchorConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let w = config.width;
        let blocks = (0..config.node_layers())
            .map(|l| {
                let fan_in = config.node_input_dim(l);
                (0..config.tasks)
                    .map(|_| NodeBlock {
                        weight: rng.normal_tensor(&[fan_in, w], (2.0 / fan_in as f64).sqrt()),
                        bias: Tensor::zeros(&[1, w]),
                        gamma: Tensor::filled(&[1, w], 1.0),
                        beta: Tensor::zeros(&[1, w]),
                        mean: Tensor::zeros(&[1, w]),
                        std: Tensor::filled(&[1, w], 1.0),
                    })
                    .collect()
            })
            .collect();
        let heads = config
            .output_dims
            .iter()
            .map(|&o| Head {
                weight: rng.normal_tensor(&[w, o], (1.0 / w as f64).sqrt()),
                bias: Tensor::zeros(&[1, o]),
            })
            .collect();
        Self::new(config, blocks, heads)
    }

    pub fn config(&self) -> &AnchorConfig {
        &self.config
    }

    pub fn tasks(&self) -> usize {
        self.config.tasks
    }

    pub fn layers(&self) -> usize {
        self.config.layers
    }

    pub fn block(&self, layer: usize, stream: usize) -> &NodeBlock {
        &self.blocks[layer][stream]
    }

    pub fn blocks(&self) -> &[Vec<NodeBlock>] {
        &self.blocks
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn head(&self, task: usize) -> &Head {
        &self.heads[task]
    }

    /// Every tensor under a stable name, layer-major then stream.
    pub fn to_params(&self) -> ParamSet {
        let mut p = ParamSet::new();
        for (l, layer) in self.blocks.iter().enumerate() {
            for (i, b) in layer.iter().enumerate() {
                for (field, t) in [
                    ("weight", &b.weight),
                    ("bias", &b.bias),
                    ("gamma", &b.gamma),
                    ("beta", &b.beta),
                    ("mean", &b.mean),
                    ("std", &b.std),
                ] {
                    p.push(format!("node{l}_{i}.{field}"), t.clone());
                }
            }
        }
        for (t, h) in self.heads.iter().enumerate() {
            p.push(format!("head{t}.weight"), h.weight.clone());
            p.push(format!("head{t}.bias"), h.bias.clone());
        }
        p
    }

    /// Inverse of [`AnchorNet::to_params`].
    pub fn from_params(config: AnchorConfig, params: &ParamSet) -> Result<Self> {
        config.validate()?;
        let get = |name: String| {
            params
                .get(&name)
                .cloned()
                .ok_or_else(|| Error::invalid(format!("anchor parameter {name} is missing")))
        };
        let blocks = (0..config.node_layers())
            .map(|l| {
                (0..config.tasks)
                    .map(|i| {
                        Ok(NodeBlock {
                            weight: get(format!("node{l}_{i}.weight"))?,
                            bias: get(format!("node{l}_{i}.bias"))?,
                            gamma: get(format!("node{l}_{i}.gamma"))?,
                            beta: get(format!("node{l}_{i}.beta"))?,
                            mean: get(format!("node{l}_{i}.mean"))?,
                            std: get(format!("node{l}_{i}.std"))?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let heads = (0..config.tasks)
            .map(|t| {
                Ok(Head {
                    weight: get(format!("head{t}.weight"))?,
                    bias: get(format!("head{t}.bias"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(config, blocks, heads)
    }

    /// Channels normalized at every node of a layer.
    pub fn channels(&self, _layer: usize) -> usize {
        self.config.width
    }
}

/// Per-node normalization perturbations `(Δγ, Δβ)`, indexed `[layer][stream]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormDeltas {
    pub gamma: Vec<Vec<Tensor>>,
    pub beta: Vec<Vec<Tensor>>,
}

impl NormDeltas {
    pub fn zeros(anchor: &AnchorNet) -> Self {
        let c = anchor.config();
        let make = || {
            (0..c.node_layers())
                .map(|l| (0..c.tasks).map(|_| Tensor::zeros(&[1, anchor.channels(l)])).collect())
                .collect()
        };
        Self {
            gamma: make(),
            beta: make(),
        }
    }

    pub fn total_len(&self) -> usize {
        self.gamma.iter().chain(&self.beta).flatten().map(Tensor::len).sum()
    }

    pub fn check(&self, anchor: &AnchorNet) -> Result<()> {
        let c = anchor.config();
        for set in [&self.gamma, &self.beta] {
            if set.len() != c.node_layers() {
                return Err(Error::shape("norm_deltas", "expected one entry per node layer"));
            }
            for (l, layer) in set.iter().enumerate() {
                if layer.len() != c.tasks || layer.iter().any(|t| t.shape() != [1, anchor.channels(l)]) {
                    return Err(Error::shape("norm_deltas", format!("layer {l} has wrong shapes")));
                }
            }
        }
        Ok(())
    }
}

/// Branching logits: `logit(block, child, parent)`, stored as `L × N × N`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchingLogits {
    layers: usize,
    tasks: usize,
    values: Vec<f64>,
}

/// Relaxed (or one-hot) parent selections with the same layout as
/// [`BranchingLogits`]; each row lies on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchSample {
    layers: usize,
    tasks: usize,
    values: Vec<f64>,
}

macro_rules! routing_tensor {
    ($ty:ident) => {
        impl $ty {
            pub fn layers(&self) -> usize {
                self.layers
            }

            pub fn tasks(&self) -> usize {
                self.tasks
            }

            pub fn values(&self) -> &[f64] {
                &self.values
            }

            pub fn row(&self, block: usize, child: usize) -> &[f64] {
                let n = self.tasks;
                let start = (block * n + child) * n;
                &self.values[start..start + n]
            }

            pub fn get(&self, block: usize, child: usize, parent: usize) -> f64 {
                self.row(block, child)[parent]
            }

            /// Block `b` as an `N × N` tensor (row = child).
            pub fn block_tensor(&self, block: usize) -> Tensor {
                let n = self.tasks;
                let start = block * n * n;
                Tensor::matrix(n, n, self.values[start..start + n * n].to_vec())
                    .expect("block extents are positive")
            }
        }
    };
}

routing_tensor!(BranchingLogits);
routing_tensor!(BranchSample);

impl BranchingLogits {
    pub fn new(layers: usize, tasks: usize, values: Vec<f64>) -> Result<Self> {
        if layers == 0 || tasks == 0 || values.len() != layers * tasks * tasks {
            return Err(Error::shape("branching_logits", format!("{} values for L={layers}, N={tasks}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "branching_logits" });
        }
        Ok(Self { layers, tasks, values })
    }
}

impl BranchSample {
    pub fn new(layers: usize, tasks: usize, values: Vec<f64>) -> Result<Self> {
        if layers == 0 || tasks == 0 || values.len() != layers * tasks * tasks {
            return Err(Error::shape("branch_sample", format!("{} values for L={layers}, N={tasks}", values.len())));
        }
        for row in values.chunks(tasks) {
            let total: f64 = row.iter().sum();
            if row.iter().any(|&v| !(v >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("branch sample row {row:?} is not on the simplex")));
            }
        }
        Ok(Self { layers, tasks, values })
    }

    /// Rows `e_j`: every child keeps its own stream.
    pub fn identity(layers: usize, tasks: usize) -> Self {
        let mut values = vec![0.0; layers * tasks * tasks];
        for b in 0..layers {
            for j in 0..tasks {
                values[(b * tasks + j) * tasks + j] = 1.0;
            }
        }
        Self { layers, tasks, values }
    }

    /// One-hot rows selecting each child's parent in `tree`.
    pub fn one_hot(tree: &TreeArchitecture) -> Self {
        let (layers, tasks) = (tree.layers(), tree.tasks());
        let mut values = vec![0.0; layers * tasks * tasks];
        for b in 0..layers {
            for j in 0..tasks {
                values[(b * tasks + j) * tasks + tree.parent(b, j)] = 1.0;
            }
        }
        Self { layers, tasks, values }
    }

    pub fn from_blocks(blocks: &[Tensor]) -> Result<Self> {
        let tasks = blocks.first().map(Tensor::cols).unwrap_or(0);
        let values = blocks.iter().flat_map(|b| b.data().iter().copied()).collect();
        Self::new(blocks.len(), tasks, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_params_round_trip() {
        let config = AnchorConfig {
            tasks: 2,
            layers: 2,
            input_dim: 3,
            width: 4,
            output_dims: vec![1, 2],
        };
        let a = AnchorNet::random(config.clone(), &mut Rng::new(0)).unwrap();
        let p = a.to_params();
        assert_eq!(p.len(), 3 * 2 * 6 + 2 * 2);
        assert_eq!(AnchorNet::from_params(config, &p).unwrap(), a);
    }

    #[test]
    fn branch_sample_rejects_off_simplex_rows() {
        assert!(BranchSample::new(1, 2, vec![0.5, 0.6, 0.5, 0.5]).is_err());
        assert!(BranchSample::new(1, 2, vec![1.5, -0.5, 0.5, 0.5]).is_err());
        assert!(BranchingLogits::new(1, 2, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
    }
}
