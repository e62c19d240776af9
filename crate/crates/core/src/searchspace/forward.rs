use super::{AnchorNet, BranchSample, NodeBlock, NormDeltas, TreeArchitecture};
use crate::error::{Error, Result};
use crate::numkernel::{kernel, Graph, Tensor, Var};

/// Normalization deltas living on a graph, indexed `[layer][stream]`.
#[derive(Debug, Clone)]
pub struct DeltaVars {
    pub gamma: Vec<Vec<Var>>,
    pub beta: Vec<Vec<Var>>,
}

impl DeltaVars {
    pub fn constants(g: &Graph, deltas: &NormDeltas) -> Self {
        let lift = |set: &Vec<Vec<Tensor>>| {
            set.iter()
                .map(|layer| layer.iter().map(|t| g.constant(t.clone())).collect())
                .collect()
        };
        Self {
            gamma: lift(&deltas.gamma),
            beta: lift(&deltas.beta),
        }
    }

    fn at(&self, layer: usize, stream: usize) -> (Var, Var) {
        (self.gamma[layer][stream], self.beta[layer][stream])
    }
}

fn block_on_graph(g: &Graph, block: &NodeBlock, x: Var, delta: Option<(Var, Var)>) -> Result<Var> {
    let w = g.constant(block.weight.clone());
    let b = g.constant(block.bias.clone());
    let h = g.add_row(g.matmul(x, w)?, b)?;
    let n = g.normalize_frozen(h, &block.mean, &block.std)?;
    let gamma = g.constant(block.gamma.clone());
    let beta = g.constant(block.beta.clone());
    let (gamma, beta) = match delta {
        Some((dg, db)) => (g.add(gamma, dg)?, g.add(beta, db)?),
        None => (gamma, beta),
    };
    g.relu(g.add_row(g.mul_row(n, gamma)?, beta)?)
}

fn block_plain(block: &NodeBlock, x: &Tensor, delta: Option<(&Tensor, &Tensor)>) -> Result<Tensor> {
    let h = kernel::add_row(&kernel::matmul(x, &block.weight)?, &block.bias)?;
    let n = kernel::normalize_frozen(&h, &block.mean, &block.std)?;
    let (gamma, beta) = match delta {
        Some((dg, db)) => (kernel::add(&block.gamma, dg)?, kernel::add(&block.beta, db)?),
        None => (block.gamma.clone(), block.beta.clone()),
    };
    Ok(kernel::relu(&kernel::add_row(&kernel::mul_row(&n, &gamma)?, &beta)?))
}

fn check_input(anchor: &AnchorNet, x: &Tensor) -> Result<()> {
    if x.cols() != anchor.config().input_dim {
        return Err(Error::shape(
            "anchor_forward",
            format!("input has {} columns, anchor expects {}", x.cols(), anchor.config().input_dim),
        ));
    }
    Ok(())
}

/// Post-activation outputs of every node along one stream, unmodulated.
pub fn stream_features(anchor: &AnchorNet, stream: usize, x: &Tensor) -> Result<Vec<Tensor>> {
    check_input(anchor, x)?;
    let mut out: Vec<Tensor> = Vec::with_capacity(anchor.layers() + 1);
    for l in 0..=anchor.layers() {
        let input = out.last().unwrap_or(x);
        out.push(block_plain(anchor.block(l, stream), input, None)?);
    }
    Ok(out)
}

/// Soft routing on a graph: child `(b + 1, j)` reads the convex combination
/// of layer-`b` outputs weighted by row `j` of `nu_blocks[b]` (an `N × N`
/// node). Returns one output node per task head.
pub fn soft_outputs(
    g: &Graph,
    anchor: &AnchorNet,
    nu_blocks: &[Var],
    x: Var,
    deltas: Option<&DeltaVars>,
) -> Result<Vec<Var>> {
    let n = anchor.tasks();
    if nu_blocks.len() != anchor.layers() {
        return Err(Error::shape(
            "forward_soft",
            format!("{} routing blocks for {} layers", nu_blocks.len(), anchor.layers()),
        ));
    }
    let delta = |l: usize, i: usize| deltas.map(|d| d.at(l, i));
    let mut ys = (0..n)
        .map(|i| block_on_graph(g, anchor.block(0, i), x, delta(0, i)))
        .collect::<Result<Vec<_>>>()?;
    for (b, &nu) in nu_blocks.iter().enumerate() {
        if g.shape(nu) != [n, n] {
            return Err(Error::shape("forward_soft", format!("routing block {b} is not {n}x{n}")));
        }
        let mut next = Vec::with_capacity(n);
        for j in 0..n {
            let weights = g.slice(nu, j * n, n)?;
            let input = g.combine(weights, &ys)?;
            next.push(block_on_graph(g, anchor.block(b + 1, j), input, delta(b + 1, j))?);
        }
        ys = next;
    }
    ys.iter()
        .enumerate()
        .map(|(t, &y)| {
            let head = anchor.head(t);
            let w = g.constant(head.weight.clone());
            let bias = g.constant(head.bias.clone());
            g.add_row(g.matmul(y, w)?, bias)
        })
        .collect()
}

/// Per-task outputs under relaxed routing `nu`.
pub fn forward_soft(
    anchor: &AnchorNet,
    nu: &BranchSample,
    x: &Tensor,
    mods: Option<&NormDeltas>,
) -> Result<Vec<Tensor>> {
    check_input(anchor, x)?;
    if nu.layers() != anchor.layers() || nu.tasks() != anchor.tasks() {
        return Err(Error::shape("forward_soft", "routing does not match the anchor"));
    }
    if let Some(m) = mods {
        m.check(anchor)?;
    }
    let g = Graph::new();
    let xv = g.constant(x.clone());
    let blocks: Vec<Var> = (0..nu.layers()).map(|b| g.constant(nu.block_tensor(b))).collect();
    let deltas = mods.map(|m| DeltaVars::constants(&g, m));
    let outs = soft_outputs(&g, anchor, &blocks, xv, deltas.as_ref())?;
    if let Some(op) = g.failure() {
        return Err(Error::NonFinite { op });
    }
    Ok(outs.into_iter().map(|v| g.value(v)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardOutput {
    pub outputs: Vec<Tensor>,
    /// Which nodes were evaluated, `[layer][stream]`.
    pub evaluated: Vec<Vec<bool>>,
}

impl HardOutput {
    pub fn evaluated_count(&self) -> usize {
        self.evaluated.iter().flatten().filter(|&&e| e).count()
    }
}

/// Per-task outputs of the tree; only its active nodes are evaluated.
pub fn forward_hard(
    anchor: &AnchorNet,
    tree: &TreeArchitecture,
    x: &Tensor,
    mods: Option<&NormDeltas>,
) -> Result<HardOutput> {
    check_input(anchor, x)?;
    if tree.layers() != anchor.layers() || tree.tasks() != anchor.tasks() {
        return Err(Error::shape("forward_hard", "tree does not match the anchor"));
    }
    if let Some(m) = mods {
        m.check(anchor)?;
    }
    let (n, layers) = (anchor.tasks(), anchor.layers());
    let delta = |l: usize, i: usize| mods.map(|m| (&m.gamma[l][i], &m.beta[l][i]));
    let mut evaluated = vec![vec![false; n]; layers + 1];
    let mut ys: Vec<Option<Tensor>> = (0..n)
        .map(|i| {
            if tree.is_active(0, i) {
                evaluated[0][i] = true;
                block_plain(anchor.block(0, i), x, delta(0, i)).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    for b in 0..layers {
        let mut next = Vec::with_capacity(n);
        for j in 0..n {
            if !tree.is_active(b + 1, j) {
                next.push(None);
                continue;
            }
            let input = ys[tree.parent(b, j)]
                .as_ref()
                .expect("parents of active nodes are active");
            evaluated[b + 1][j] = true;
            next.push(Some(block_plain(anchor.block(b + 1, j), input, delta(b + 1, j))?));
        }
        ys = next;
    }
    let outputs = ys
        .iter()
        .enumerate()
        .map(|(t, y)| {
            let head = anchor.head(t);
            let y = y.as_ref().expect("top nodes are always active");
            kernel::add_row(&kernel::matmul(y, &head.weight)?, &head.bias)
        })
        .collect::<Result<Vec<_>>>()?;
    if outputs.iter().any(|o| !o.is_finite()) {
        return Err(Error::NonFinite { op: "forward_hard" });
    }
    Ok(HardOutput { outputs, evaluated })
}
