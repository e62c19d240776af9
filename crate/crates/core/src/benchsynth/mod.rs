//! Synthetic multi-task regression suites with clustered teachers.
//!
//! Tasks in the same cluster read their targets off one random two-layer
//! teacher, each through its own output rotation, so they share internal
//! structure that tasks in other clusters do not.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{kernel, Rng, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSuiteSpec {
    pub tasks: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub teacher_hidden: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Teacher cluster of every task.
    pub clusters: Vec<usize>,
    /// Standard deviation of the additive target noise.
    pub noise: f64,
    /// Random orthogonal output rotation per task (identity when false).
    pub rotate: bool,
    pub seed: u64,
}

impl Default for TaskSuiteSpec {
    fn default() -> Self {
        Self {
            tasks: 3,
            input_dim: 16,
            output_dim: 4,
            teacher_hidden: 32,
            train: 4096,
            val: 1024,
            test: 1024,
            clusters: vec![0, 0, 1],
            noise: 0.1,
            rotate: true,
            seed: 0,
        }
    }
}

impl TaskSuiteSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tasks < 2 {
            return Err(Error::invalid("a task suite needs at least two tasks"));
        }
        if self.clusters.len() != self.tasks {
            return Err(Error::invalid(format!(
                "clusters lists {} tasks, suite has {}",
                self.clusters.len(),
                self.tasks
            )));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.teacher_hidden == 0 {
            return Err(Error::invalid("suite dimensions must be positive"));
        }
        if self.train < 2 || self.val == 0 || self.test == 0 {
            return Err(Error::invalid("every split needs samples (train at least two)"));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::invalid("noise must be a finite nonnegative number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Shared inputs and per-task targets of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub inputs: Tensor,
    pub targets: Vec<Tensor>,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `idx` of the inputs and of every target.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<Tensor>) {
        (
            self.inputs.gather_rows(idx),
            self.targets.iter().map(|t| t.gather_rows(idx)).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub spec: TaskSuiteSpec,
    pub train: SplitData,
    pub val: SplitData,
    pub test: SplitData,
}

impl TaskDataset {
    pub fn split(&self, split: Split) -> &SplitData {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn task_names(&self) -> Vec<String> {
        (0..self.spec.tasks).map(task_name).collect()
    }

    /// Writes `meta.json`, `inputs.csv` and `targets_task<k>.csv` into `dir`.
    /// Every CSV row starts with its split tag.
    pub fn export(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let meta = serde_json::to_string_pretty(&self.spec).map_err(std::io::Error::other)?;
        fs::write(dir.join("meta.json"), meta + "\n")?;
        let dump = |prefix: &str, width: usize, pick: &dyn Fn(&SplitData) -> &Tensor| {
            let mut out = String::from("split");
            for c in 1..=width {
                write!(out, ",{prefix}_{c}").expect("writing to a string");
            }
            out.push('\n');
            for split in Split::ALL {
                let t = pick(self.split(split));
                for r in 0..t.rows() {
                    out.push_str(split.name());
                    for v in t.row_slice(r) {
                        write!(out, ",{v}").expect("writing to a string");
                    }
                    out.push('\n');
                }
            }
            out
        };
        fs::write(dir.join("inputs.csv"), dump("x", self.spec.input_dim, &|s| &s.inputs))?;
        for k in 0..self.spec.tasks {
            let body = dump("y", self.spec.output_dim, &|s| &s.targets[k]);
            fs::write(dir.join(format!("targets_task{}.csv", k + 1)), body)?;
        }
        Ok(())
    }
}

pub fn task_name(k: usize) -> String {
    format!("task{}", k + 1)
}

struct Teacher {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
}

impl Teacher {
    fn new(spec: &TaskSuiteSpec, rng: &mut Rng) -> Self {
        let (d, h, o) = (spec.input_dim, spec.teacher_hidden, spec.output_dim);
        Self {
            w1: rng.normal_tensor(&[d, h], (2.0 / d as f64).sqrt()),
            b1: rng.normal_tensor(&[1, h], 0.1),
            w2: rng.normal_tensor(&[h, o], (1.0 / h as f64).sqrt()),
        }
    }

    fn apply(&self, x: &Tensor) -> Tensor {
        let pre = kernel::matmul(x, &self.w1).and_then(|z| kernel::add_row(&z, &self.b1));
        let h = kernel::relu(&pre.expect("teacher shapes"));
        kernel::matmul(&h, &self.w2).expect("teacher shapes")
    }
}

/// Random orthogonal matrix by Gram-Schmidt on Gaussian columns.
fn random_rotation(n: usize, rng: &mut Rng) -> Tensor {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        for c in &cols {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(c) {
                *a -= dot * b;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let mut data = vec![0.0; n * n];
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            data[i * n + j] = *v;
        }
    }
    Tensor::matrix(n, n, data).expect("square rotation")
}

pub fn generate(spec: &TaskSuiteSpec) -> Result<TaskDataset> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let mut clusters: Vec<usize> = spec.clusters.clone();
    clusters.sort_unstable();
    clusters.dedup();
    let teachers: Vec<(usize, Teacher)> = clusters
        .iter()
        .map(|&c| (c, Teacher::new(spec, &mut root.substream_at("teacher", c as u64))))
        .collect();
    let rotations: Vec<Tensor> = (0..spec.tasks)
        .map(|k| {
            if spec.rotate {
                random_rotation(spec.output_dim, &mut root.substream_at("rotation", k as u64))
            } else {
                let mut eye = Tensor::zeros(&[spec.output_dim, spec.output_dim]);
                for i in 0..spec.output_dim {
                    eye.data_mut()[i * spec.output_dim + i] = 1.0;
                }
                eye
            }
        })
        .collect();
    let make = |split: Split, rows: usize| -> Result<SplitData> {
        let inputs = root.substream(&format!("inputs/{}", split.name())).normal_tensor(&[rows, spec.input_dim], 1.0);
        let shared: Vec<(usize, Tensor)> = teachers.iter().map(|(c, t)| (*c, t.apply(&inputs))).collect();
        let targets = (0..spec.tasks)
            .map(|k| {
                let base = &shared.iter().find(|(c, _)| *c == spec.clusters[k]).expect("cluster has a teacher").1;
                let mut y = kernel::matmul(base, &rotations[k])?;
                let mut noise_rng = root.substream(&format!("noise/{}/{k}", split.name()));
                for v in y.data_mut() {
                    *v += spec.noise * noise_rng.normal();
                }
                Ok(y)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SplitData { inputs, targets })
    };
    Ok(TaskDataset {
        spec: spec.clone(),
        train: make(Split::Train, spec.train)?,
        val: make(Split::Val, spec.val)?,
        test: make(Split::Test, spec.test)?,
    })
}
