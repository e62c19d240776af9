use serde::Serialize;

use super::{AnchorNet, TreeArchitecture};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResourceReport {
    pub param_count: u64,
    /// Multiply-adds counted as two operations, per input row.
    pub flop_count: u64,
    /// Active parameters over the full anchor's parameters.
    pub ratio_to_anchor: f64,
}

fn node_cost(input: usize, width: usize) -> (u64, u64) {
    let (i, w) = (input as u64, width as u64);
    // affine weights + bias, normalization scale + shift
    let params = i * w + w + 2 * w;
    // matmul, bias, normalize (2), scale/shift (2), relu
    let flops = 2 * i * w + 6 * w;
    (params, flops)
}

fn totals(anchor: &AnchorNet, active: impl Fn(usize, usize) -> bool) -> (u64, u64) {
    let c = anchor.config();
    let (mut params, mut flops) = (0, 0);
    for l in 0..c.node_layers() {
        for _ in (0..c.tasks).filter(|&i| active(l, i)) {
            let (p, f) = node_cost(c.node_input_dim(l), anchor.channels(l));
            params += p;
            flops += f;
        }
    }
    for &o in &c.output_dims {
        let (w, o) = (c.width as u64, o as u64);
        params += w * o + o;
        flops += 2 * w * o + o;
    }
    (params, flops)
}

/// Parameters and FLOPs of the tree's active nodes plus all task heads.
pub fn resource_usage(anchor: &AnchorNet, tree: &TreeArchitecture) -> ResourceReport {
    let (param_count, flop_count) = totals(anchor, |l, i| tree.is_active(l, i));
    let (full, _) = totals(anchor, |_, _| true);
    ResourceReport {
        param_count,
        flop_count,
        ratio_to_anchor: param_count as f64 / full as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::Rng;
    use crate::searchspace::AnchorConfig;

    fn anchor(tasks: usize, layers: usize) -> AnchorNet {
        let config = AnchorConfig {
            tasks,
            layers,
            input_dim: 16,
            width: 32,
            output_dims: vec![4; tasks],
        };
        AnchorNet::random(config, &mut Rng::new(0)).unwrap()
    }

    #[test]
    fn full_tree_has_ratio_one() {
        let a = anchor(3, 4);
        let r = resource_usage(&a, &TreeArchitecture::fully_branched(3, 4));
        assert_eq!(r.ratio_to_anchor, 1.0);
        // 3 * (16*32 + 96) + 12 * (32*32 + 96) + 3 * (32*4 + 4)
        assert_eq!(r.param_count, 3 * 608 + 12 * 1120 + 3 * 132);
    }

    #[test]
    fn trunk_is_one_stream_plus_heads() {
        let a = anchor(3, 4);
        let trunk = TreeArchitecture::new(3, vec![vec![0; 3]; 4]).unwrap();
        let r = resource_usage(&a, &trunk);
        // one stream below the top, all three top nodes, all heads
        assert_eq!(r.param_count, 608 + 3 * 1120 + 3 * 1120 + 3 * 132);
        assert!(r.ratio_to_anchor < 1.0);
    }

    #[test]
    fn cost_is_strictly_monotone_in_active_set() {
        let a = anchor(2, 2);
        let mut trees = Vec::new();
        for code in 0..16u32 {
            let p = |k: u32| ((code >> k) & 1) as usize;
            trees.push(TreeArchitecture::new(2, vec![vec![p(0), p(1)], vec![p(2), p(3)]]).unwrap());
        }
        let subset = |x: &TreeArchitecture, y: &TreeArchitecture| {
            x.active_mask()
                .iter()
                .flatten()
                .zip(y.active_mask().iter().flatten())
                .all(|(&u, &v)| !u || v)
        };
        for x in &trees {
            for y in &trees {
                if subset(x, y) && x.active_mask() != y.active_mask() {
                    let (cx, cy) = (resource_usage(&a, x), resource_usage(&a, y));
                    assert!(cx.param_count < cy.param_count);
                    assert!(cx.flop_count < cy.flop_count);
                }
            }
        }
    }
}
