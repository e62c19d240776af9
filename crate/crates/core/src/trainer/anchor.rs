use std::time::Instant;

use serde::Serialize;

use super::{batch_indices, lr_at, TrainConfig};
use crate::benchsynth::SplitData;
use crate::error::{Error, Result};
use crate::numkernel::{kernel, AdamState, Graph, ParamSet, Rng, Tensor, Var, STANDARDIZE_EPS};
use crate::searchspace::{AnchorConfig, AnchorNet, Head, NodeBlock};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnchorReport {
    /// Full-train-split loss per stream with statistics frozen at init.
    pub initial_loss: Vec<f64>,
    /// The same after training.
    pub final_loss: Vec<f64>,
    pub wall_clock_secs: f64,
}

/// Slots of one stream's trainable tensors: `[weight, bias, gamma, beta]`
/// per node layer, then head weight and bias. Node weights come from
/// `trunk`, which every stream receives in the same state.
fn init_stream(config: &AnchorConfig, task: usize, mut trunk: Rng, rng: &mut Rng) -> ParamSet {
    let w = config.width;
    let mut p = ParamSet::new();
    for l in 0..config.node_layers() {
        let fan_in = config.node_input_dim(l);
        p.push(format!("node{l}.weight"), trunk.normal_tensor(&[fan_in, w], (2.0 / fan_in as f64).sqrt()));
        p.push(format!("node{l}.bias"), Tensor::zeros(&[1, w]));
        p.push(format!("node{l}.gamma"), Tensor::filled(&[1, w], 1.0));
        p.push(format!("node{l}.beta"), Tensor::zeros(&[1, w]));
    }
    let o = config.output_dims[task];
    p.push("head.weight", rng.normal_tensor(&[w, o], (1.0 / w as f64).sqrt()));
    p.push("head.bias", Tensor::zeros(&[1, o]));
    p
}

/// Training-mode loss: batch statistics at every node.
fn batch_loss(g: &Graph, vars: &[Var], layers: usize, x: &Tensor, y: &Tensor) -> Result<Var> {
    let mut h = g.constant(x.clone());
    for l in 0..layers {
        let s = 4 * l;
        let z = g.add_row(g.matmul(h, vars[s])?, vars[s + 1])?;
        let n = g.standardize(z)?;
        h = g.relu(g.add_row(g.mul_row(n, vars[s + 2])?, vars[s + 3])?)?;
    }
    let s = 4 * layers;
    let out = g.add_row(g.matmul(h, vars[s])?, vars[s + 1])?;
    g.mse(out, g.constant(y.clone()))
}

/// Population statistics over `x`, layer by layer through the frozen
/// network, then the frozen blocks and head.
fn freeze(params: &ParamSet, layers: usize, x: &Tensor) -> Result<(Vec<NodeBlock>, Head)> {
    let t = params.tensors();
    let mut h = x.clone();
    let mut blocks = Vec::with_capacity(layers);
    for l in 0..layers {
        let s = 4 * l;
        let z = kernel::add_row(&kernel::matmul(&h, &t[s])?, &t[s + 1])?;
        let (mean, var) = kernel::column_moments(&z);
        let block = NodeBlock {
            weight: t[s].clone(),
            bias: t[s + 1].clone(),
            gamma: t[s + 2].clone(),
            beta: t[s + 3].clone(),
            mean: Tensor::row(mean),
            std: Tensor::row(var.iter().map(|v| (v + STANDARDIZE_EPS).sqrt()).collect()),
        };
        let n = kernel::normalize_frozen(&z, &block.mean, &block.std)?;
        h = kernel::relu(&kernel::add_row(&kernel::mul_row(&n, &block.gamma)?, &block.beta)?);
        blocks.push(block);
    }
    let s = 4 * layers;
    Ok((
        blocks,
        Head {
            weight: t[s].clone(),
            bias: t[s + 1].clone(),
        },
    ))
}

fn frozen_loss(blocks: &[NodeBlock], head: &Head, x: &Tensor, y: &Tensor) -> Result<f64> {
    let mut h = x.clone();
    for b in blocks {
        let z = kernel::add_row(&kernel::matmul(&h, &b.weight)?, &b.bias)?;
        let n = kernel::normalize_frozen(&z, &b.mean, &b.std)?;
        h = kernel::relu(&kernel::add_row(&kernel::mul_row(&n, &b.gamma)?, &b.beta)?);
    }
    let out = kernel::add_row(&kernel::matmul(&h, &head.weight)?, &head.bias)?;
    kernel::mse(&out, y)
}

/// Trains every stream and its head on its own task alone, then freezes
/// population normalization statistics over the training split. Stream
/// randomness is keyed by task name, so reordering tasks reorders streams.
pub fn train_anchor(
    config: &TrainConfig,
    anchor_config: &AnchorConfig,
    train: &SplitData,
    names: &[String],
) -> Result<(AnchorNet, AnchorReport)> {
    anchor_config.validate()?;
    let (n, layers) = (anchor_config.tasks, anchor_config.node_layers());
    if names.len() != n || train.targets.len() != n {
        return Err(Error::invalid(format!("{n} anchor streams need {n} task names and target sets")));
    }
    if train.inputs.cols() != anchor_config.input_dim {
        return Err(Error::shape("train_anchor", "input width differs from the anchor"));
    }
    for (t, y) in train.targets.iter().enumerate() {
        if y.cols() != anchor_config.output_dims[t] || y.rows() != train.len() {
            return Err(Error::shape("train_anchor", format!("targets of task {t} have shape {:?}", y.shape())));
        }
    }
    let started = Instant::now();
    let root = Rng::new(config.seed).substream("anchor");
    let mut blocks: Vec<Vec<NodeBlock>> = vec![Vec::with_capacity(n); layers];
    let mut heads = Vec::with_capacity(n);
    let (mut initial_loss, mut final_loss) = (Vec::new(), Vec::new());
    for t in 0..n {
        let mut rng = root.substream(&names[t]);
        let mut params = init_stream(anchor_config, t, root.substream("trunk"), &mut rng);
        let (b0, h0) = freeze(&params, layers, &train.inputs)?;
        initial_loss.push(frozen_loss(&b0, &h0, &train.inputs, &train.targets[t])?);
        let mut adam = AdamState::new(params.tensors(), config.anchor_learning_rate);
        for step in 0..config.anchor_steps {
            let idx = batch_indices(&mut rng, train.len(), config.batch_size);
            let x = train.inputs.gather_rows(&idx);
            let y = train.targets[t].gather_rows(&idx);
            let g = Graph::new();
            let vars = params.as_params(&g);
            let loss = batch_loss(&g, &vars, layers, &x, &y)?;
            let grads = g.backward(loss).map_err(|e| Error::Diverged {
                stage: "anchor",
                step,
                detail: format!("stream {t}: {e}"),
            })?;
            let grads: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
            adam.learning_rate = lr_at(step, config.anchor_steps, config, config.anchor_learning_rate);
            adam.step(params.tensors_mut(), &grads)?;
        }
        let (frozen, head) = freeze(&params, layers, &train.inputs)?;
        let loss = frozen_loss(&frozen, &head, &train.inputs, &train.targets[t])?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                stage: "anchor",
                step: config.anchor_steps,
                detail: format!("stream {t} ended with a non-finite loss"),
            });
        }
        final_loss.push(loss);
        for (layer, b) in blocks.iter_mut().zip(frozen) {
            layer.push(b);
        }
        heads.push(head);
    }
    let anchor = AnchorNet::new(anchor_config.clone(), blocks, heads)?;
    Ok((
        anchor,
        AnchorReport {
            initial_loss,
            final_loss,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        },
    ))
}
