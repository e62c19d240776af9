use serde::Serialize;

use super::BranchingLogits;
use crate::error::{Error, Result};

/// A parent-child link whose endpoints lie on different anchor streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CrossEdge {
    pub block: usize,
    pub child: usize,
    pub parent: usize,
}

/// One parent per child node; determines a unique tree over the anchor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeArchitecture {
    tasks: usize,
    /// `parents[block][child]`
    parents: Vec<Vec<usize>>,
    /// `active[layer][stream]` for node layers `0..=L`.
    active: Vec<Vec<bool>>,
}

impl TreeArchitecture {
    pub fn new(tasks: usize, parents: Vec<Vec<usize>>) -> Result<Self> {
        if tasks == 0 || parents.is_empty() {
            return Err(Error::invalid("a tree needs at least one task and one block"));
        }
        for (b, row) in parents.iter().enumerate() {
            if row.len() != tasks {
                return Err(Error::shape("tree", format!("block {b} has {} children", row.len())));
            }
            if let Some(&p) = row.iter().find(|&&p| p >= tasks) {
                return Err(Error::invalid(format!("parent index {p} out of range at block {b}")));
            }
        }
        let layers = parents.len();
        let mut active = vec![vec![false; tasks]; layers + 1];
        active[layers] = vec![true; tasks];
        for b in (0..layers).rev() {
            for j in 0..tasks {
                if active[b + 1][j] {
                    active[b][parents[b][j]] = true;
                }
            }
        }
        Ok(Self { tasks, parents, active })
    }

    /// Every child keeps its own stream.
    pub fn fully_branched(tasks: usize, layers: usize) -> Self {
        Self::new(tasks, vec![(0..tasks).collect(); layers]).expect("identity routing is valid")
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn layers(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, block: usize, child: usize) -> usize {
        self.parents[block][child]
    }

    pub fn parents(&self) -> &[Vec<usize>] {
        &self.parents
    }

    pub fn is_active(&self, layer: usize, stream: usize) -> bool {
        self.active[layer][stream]
    }

    pub fn active_mask(&self) -> &[Vec<bool>] {
        &self.active
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().flatten().filter(|&&a| a).count()
    }

    /// Edges between active nodes that cross streams.
    pub fn cross_task_edges(&self) -> Vec<CrossEdge> {
        let mut out = Vec::new();
        for (b, row) in self.parents.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                if p != j && self.active[b + 1][j] {
                    out.push(CrossEdge {
                        block: b,
                        child: j,
                        parent: p,
                    });
                }
            }
        }
        out
    }

    /// Parent indices, block-major, joined by dashes.
    pub fn signature(&self) -> String {
        self.parents
            .iter()
            .flatten()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }
}

/// Most likely tree: each child takes its highest-scoring parent, ties
/// going to the lowest parent index.
pub fn decode_architecture(alpha: &BranchingLogits) -> TreeArchitecture {
    let parents = (0..alpha.layers())
        .map(|b| {
            (0..alpha.tasks())
                .map(|j| {
                    let row = alpha.row(b, j);
                    let mut best = 0;
                    for (i, &v) in row.iter().enumerate().skip(1) {
                        if v > row[best] {
                            best = i;
                        }
                    }
                    best
                })
                .collect()
        })
        .collect();
    TreeArchitecture::new(alpha.tasks(), parents).expect("argmax parents are in range")
}
