//! Preference-conditioned hypernetworks and the inference pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{Graph, ParamSet, Rng, Tensor, Var};
use crate::searchspace::{
    decode_architecture, forward_hard, AnchorNet, BranchingLogits, DeltaVars, NormDeltas, TreeArchitecture,
};

pub const EMBED_DIM: usize = 32;
pub const HIDDEN: usize = 100;

/// Task weights `r` on the simplex and a cost knob `c` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preference {
    r: Vec<f64>,
    c: f64,
}

impl Preference {
    pub fn new(r: Vec<f64>, c: f64) -> Result<Self> {
        if r.is_empty() {
            return Err(Error::invalid("preference needs at least one task weight"));
        }
        if r.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("task weights {r:?} must be finite and nonnegative")));
        }
        let total: f64 = r.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("task weights sum to {total}, not 1")));
        }
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::invalid(format!("cost preference {c} outside [0, 1]")));
        }
        Ok(Self { r, c })
    }

    /// Rescales `r` onto the simplex; the flag reports whether the input sum
    /// was off by more than `1e-6`.
    pub fn normalized(r: Vec<f64>, c: f64) -> Result<(Self, bool)> {
        let total: f64 = r.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::invalid(format!("task weights {r:?} have no positive mass")));
        }
        let rescaled = (total - 1.0).abs() > 1e-6;
        let r = if rescaled { r.iter().map(|v| v / total).collect() } else { r };
        Self::new(r, c).map(|p| (p, rescaled))
    }

    pub fn uniform(tasks: usize, c: f64) -> Result<Self> {
        Self::new(vec![1.0 / tasks as f64; tasks], c)
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn tasks(&self) -> usize {
        self.r.len()
    }
}

/// Slots of a preference embedding inside a parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferenceEmbedding {
    /// `N × 32`, row `i` is `e_i`.
    pub tasks: usize,
    /// `1 × 32`, the cost embedding `e_c`.
    pub cost: usize,
}

impl PreferenceEmbedding {
    fn register(params: &mut ParamSet, prefix: &str, n: usize, rng: &mut Rng) -> Self {
        Self {
            tasks: params.push(format!("{prefix}.embed.tasks"), rng.normal_tensor(&[n, EMBED_DIM], 1.0)),
            cost: params.push(format!("{prefix}.embed.cost"), rng.normal_tensor(&[1, EMBED_DIM], 1.0)),
        }
    }
}

/// `p = Σ_i r_i e_i + c e_c` on a graph.
pub fn embed_on_graph(g: &Graph, emb: PreferenceEmbedding, vars: &[Var], pref: &Preference) -> Result<Var> {
    let n = g.shape(vars[emb.tasks])[0];
    if pref.tasks() != n {
        return Err(Error::shape("embed", format!("{} task weights for {n} embeddings", pref.tasks())));
    }
    let r = g.constant(Tensor::row(pref.r.clone()));
    let tasks = g.matmul(r, vars[emb.tasks])?;
    let cost = g.scale(vars[emb.cost], pref.c)?;
    g.add(tasks, cost)
}

/// Preference embedding evaluated on plain values.
pub fn embed(pref: &Preference, params: &ParamSet, emb: PreferenceEmbedding) -> Result<Tensor> {
    let g = Graph::new();
    let vars = params.as_constants(&g);
    let p = embed_on_graph(&g, emb, &vars, pref)?;
    Ok(g.value(p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    weight: usize,
    bias: usize,
}

impl Dense {
    fn register(params: &mut ParamSet, name: &str, weight: Tensor, bias: Tensor) -> Self {
        Self {
            weight: params.push(format!("{name}.w"), weight),
            bias: params.push(format!("{name}.b"), bias),
        }
    }

    fn he(params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let w = rng.normal_tensor(&[fan_in, fan_out], (2.0 / fan_in as f64).sqrt());
        Self::register(params, name, w, Tensor::zeros(&[1, fan_out]))
    }

    fn apply(self, g: &Graph, vars: &[Var], x: Var) -> Result<Var> {
        g.add_row(g.matmul(x, vars[self.weight])?, vars[self.bias])
    }
}

fn trunk(g: &Graph, layers: &[Dense], vars: &[Var], mut x: Var) -> Result<Var> {
    for layer in layers {
        x = g.relu(layer.apply(g, vars, x)?)?;
    }
    Ok(x)
}

/// Preference → branching logits: embedding, two ReLU layers of width 100,
/// and one `N × N` linear head per branching block.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeHypernet {
    tasks: usize,
    layers: usize,
    params: ParamSet,
    embedding: PreferenceEmbedding,
    trunk: Vec<Dense>,
    heads: Vec<Dense>,
}

impl EdgeHypernet {
    /// Head weights start at zero and head biases put `diag_bias` on every
    /// "keep own stream" logit, so the untrained net decodes to the fully
    /// branched tree for every preference.
    pub fn new(tasks: usize, layers: usize, diag_bias: f64, rng: &mut Rng) -> Self {
        let mut params = ParamSet::new();
        let embedding = PreferenceEmbedding::register(&mut params, "edge", tasks, rng);
        let trunk = vec![
            Dense::he(&mut params, "edge.fc1", EMBED_DIM, HIDDEN, rng),
            Dense::he(&mut params, "edge.fc2", HIDDEN, HIDDEN, rng),
        ];
        let mut diag = Tensor::zeros(&[1, tasks * tasks]);
        for j in 0..tasks {
            diag.data_mut()[j * tasks + j] = diag_bias;
        }
        let heads = (0..layers)
            .map(|b| {
                let w = Tensor::zeros(&[HIDDEN, tasks * tasks]);
                Dense::register(&mut params, &format!("edge.head{b}"), w, diag.clone())
            })
            .collect();
        Self {
            tasks,
            layers,
            params,
            embedding,
            trunk,
            heads,
        }
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Replaces the parameter values, keeping names and shapes.
    pub fn load(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        replace_params(&mut self.params, tensors)
    }

    pub fn embedding(&self) -> PreferenceEmbedding {
        self.embedding
    }

    /// One `N × N` logits node per branching block (row = child).
    pub fn logits_on_graph(&self, g: &Graph, vars: &[Var], pref: &Preference) -> Result<Vec<Var>> {
        let p = embed_on_graph(g, self.embedding, vars, pref)?;
        let h = trunk(g, &self.trunk, vars, p)?;
        self.heads
            .iter()
            .map(|head| g.reshape(head.apply(g, vars, h)?, &[self.tasks, self.tasks]))
            .collect()
    }

    pub fn edge_forward(&self, pref: &Preference) -> Result<BranchingLogits> {
        let g = Graph::new();
        let vars = self.params.as_constants(&g);
        let blocks = self.logits_on_graph(&g, &vars, pref)?;
        let values = blocks.iter().flat_map(|&b| g.value(b).into_data()).collect();
        BranchingLogits::new(self.layers, self.tasks, values)
    }
}

/// Preference → per-node normalization deltas: embedding, three ReLU layers
/// of width 100, and one zero-initialized head per anchor node emitting
/// `(Δγ, Δβ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightHypernet {
    tasks: usize,
    /// Channels per node layer.
    channels: Vec<usize>,
    params: ParamSet,
    embedding: PreferenceEmbedding,
    trunk: Vec<Dense>,
    /// `heads[layer][stream]`
    heads: Vec<Vec<Dense>>,
}

impl WeightHypernet {
    pub fn new(anchor: &AnchorNet, rng: &mut Rng) -> Self {
        let tasks = anchor.tasks();
        let channels: Vec<usize> = (0..=anchor.layers()).map(|l| anchor.channels(l)).collect();
        let mut params = ParamSet::new();
        let embedding = PreferenceEmbedding::register(&mut params, "weight", tasks, rng);
        let trunk = vec![
            Dense::he(&mut params, "weight.fc1", EMBED_DIM, HIDDEN, rng),
            Dense::he(&mut params, "weight.fc2", HIDDEN, HIDDEN, rng),
            Dense::he(&mut params, "weight.fc3", HIDDEN, HIDDEN, rng),
        ];
        let heads = channels
            .iter()
            .enumerate()
            .map(|(l, &ch)| {
                (0..tasks)
                    .map(|i| {
                        Dense::register(
                            &mut params,
                            &format!("weight.head{l}_{i}"),
                            Tensor::zeros(&[HIDDEN, 2 * ch]),
                            Tensor::zeros(&[1, 2 * ch]),
                        )
                    })
                    .collect()
            })
            .collect();
        Self {
            tasks,
            channels,
            params,
            embedding,
            trunk,
            heads,
        }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn load(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        replace_params(&mut self.params, tensors)
    }

    /// `(Δγ, Δβ)` nodes indexed `[layer][stream]`.
    pub fn deltas_on_graph(
        &self,
        g: &Graph,
        vars: &[Var],
        pref: &Preference,
    ) -> Result<DeltaVars> {
        let p = embed_on_graph(g, self.embedding, vars, pref)?;
        let h = trunk(g, &self.trunk, vars, p)?;
        let mut gamma = Vec::with_capacity(self.channels.len());
        let mut beta = Vec::with_capacity(self.channels.len());
        for (layer, &ch) in self.heads.iter().zip(&self.channels) {
            let (mut gl, mut bl) = (Vec::new(), Vec::new());
            for head in layer {
                let out = head.apply(g, vars, h)?;
                gl.push(g.slice(out, 0, ch)?);
                bl.push(g.slice(out, ch, ch)?);
            }
            gamma.push(gl);
            beta.push(bl);
        }
        Ok(DeltaVars { gamma, beta })
    }

    pub fn weight_forward(&self, pref: &Preference) -> Result<NormDeltas> {
        let g = Graph::new();
        let vars = self.params.as_constants(&g);
        let d = self.deltas_on_graph(&g, &vars, pref)?;
        let lower = |set: &Vec<Vec<Var>>| set.iter().map(|l| l.iter().map(|&v| g.value(v)).collect()).collect();
        Ok(NormDeltas {
            gamma: lower(&d.gamma),
            beta: lower(&d.beta),
        })
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }
}

fn replace_params(params: &mut ParamSet, tensors: Vec<Tensor>) -> Result<()> {
    if tensors.len() != params.len() {
        return Err(Error::shape("load", format!("{} tensors for {} slots", tensors.len(), params.len())));
    }
    for (slot, t) in params.tensors_mut().iter_mut().zip(tensors) {
        if slot.shape() != t.shape() {
            return Err(Error::shape("load", format!("{:?} vs {:?}", slot.shape(), t.shape())));
        }
        *slot = t;
    }
    Ok(())
}

/// A predicted sub-network: the tree over the anchor plus its modulation.
#[derive(Debug, Clone)]
pub struct ModulatedModel<'a> {
    pub anchor: &'a AnchorNet,
    pub tree: TreeArchitecture,
    pub deltas: Option<NormDeltas>,
}

impl ModulatedModel<'_> {
    pub fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        Ok(forward_hard(self.anchor, &self.tree, x, self.deltas.as_ref())?.outputs)
    }
}

/// Decodes the most likely tree for `pref` and attaches its deltas. Without
/// a weight hypernet the anchor's own normalization is used.
pub fn predict<'a>(
    edge: &EdgeHypernet,
    weight: Option<&WeightHypernet>,
    anchor: &'a AnchorNet,
    pref: &Preference,
) -> Result<(TreeArchitecture, ModulatedModel<'a>)> {
    if edge.tasks() != anchor.tasks() || edge.layers() != anchor.layers() {
        return Err(Error::shape("predict", "edge hypernet does not match the anchor"));
    }
    let tree = decode_architecture(&edge.edge_forward(pref)?);
    let deltas = weight.map(|w| w.weight_forward(pref)).transpose()?;
    let model = ModulatedModel {
        anchor,
        tree: tree.clone(),
        deltas,
    };
    Ok((tree, model))
}
