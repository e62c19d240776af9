use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use prefnas_core::benchsynth::{Split, TaskSuiteSpec};
use prefnas_core::searchspace::AnchorConfig;
use prefnas_core::trainer::TrainConfig;

use crate::CliError;

/// Anchor depth and width; the task count and dimensions come from the suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorShape {
    pub layers: usize,
    pub width: usize,
}

impl Default for AnchorShape {
    fn default() -> Self {
        Self { layers: 4, width: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Simplex points per cost value; `N + 1 + 20` when absent.
    pub grid_points: Option<usize>,
    pub costs: Vec<f64>,
    /// Dirichlet concentration of the sampled grid points.
    pub eta: f64,
    /// Hypervolume reference; all ones when absent.
    pub reference: Option<Vec<f64>>,
    pub split: Split,
    /// Preferences drawn for the adaptation comparison.
    pub hv_preferences: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            grid_points: None,
            costs: vec![0.0, 1.0],
            eta: 0.2,
            reference: None,
            split: Split::Test,
            hv_preferences: 20,
        }
    }
}

impl EvalConfig {
    pub fn grid_points_for(&self, tasks: usize) -> usize {
        self.grid_points.unwrap_or(tasks + 1 + 20)
    }

    pub fn reference_for(&self, tasks: usize) -> Vec<f64> {
        self.reference.clone().unwrap_or_else(|| vec![1.0; tasks])
    }
}

/// One JSON document driving every command. The top-level seed feeds all
/// random streams and overrides the nested seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub suite: TaskSuiteSpec,
    #[serde(default)]
    pub anchor: AnchorShape,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Applies the seed override, copies the seed into the nested sections
    /// and validates everything.
    pub fn resolve(mut self, seed_override: Option<u64>) -> Result<Self, CliError> {
        if seed_override.is_some() {
            self.seed = seed_override;
        }
        let seed = self
            .seed
            .ok_or_else(|| CliError::Config("missing required field `seed` (set it in the config or pass --seed)".into()))?;
        self.suite.seed = seed;
        self.train.seed = seed;
        let field = |name: &str, e: prefnas_core::Error| CliError::Config(format!("`{name}`: {e}"));
        self.suite.validate().map_err(|e| field("suite", e))?;
        self.anchor_config().validate().map_err(|e| field("anchor", e))?;
        self.train.validate(self.suite.tasks).map_err(|e| field("train", e))?;
        let n = self.suite.tasks;
        if self.eval.costs.is_empty() || self.eval.costs.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(CliError::Config("`eval.costs` must be non-empty values in [0, 1]".into()));
        }
        if !(self.eval.eta > 0.0) {
            return Err(CliError::Config("`eval.eta` must be positive".into()));
        }
        if self.eval.grid_points_for(n) < n {
            return Err(CliError::Config(format!("`eval.grid_points` must be at least {n}")));
        }
        if self.eval.hv_preferences == 0 {
            return Err(CliError::Config("`eval.hv_preferences` must be positive".into()));
        }
        let reference = self.eval.reference_for(n);
        if reference.len() != n || reference.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(CliError::Config(format!("`eval.reference` needs {n} positive entries")));
        }
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("resolved configs carry a seed")
    }

    pub fn anchor_config(&self) -> AnchorConfig {
        AnchorConfig {
            tasks: self.suite.tasks,
            layers: self.anchor.layers,
            input_dim: self.suite.input_dim,
            width: self.anchor.width,
            output_dims: vec![self.suite.output_dim; self.suite.tasks],
        }
    }

    /// SHA-256 over the canonical JSON of everything except the output path.
    pub fn hash(&self) -> String {
        let canonical = RunConfig { out: None, ..self.clone() };
        let text = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn to_pretty_json(&self) -> String {
        let echo = RunConfig { out: None, ..self.clone() };
        serde_json::to_string_pretty(&echo).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_required() {
        let err = RunConfig::from_json("{}").unwrap().resolve(None).unwrap_err();
        assert!(err.to_string().contains("seed"));
        let ok = RunConfig::from_json("{}").unwrap().resolve(Some(3)).unwrap();
        assert_eq!(ok.train.seed, 3);
        assert_eq!(ok.suite.seed, 3);
    }

    #[test]
    fn unknown_and_invalid_fields_are_named() {
        let err = RunConfig::from_json(r#"{"seed": 1, "trian": {}}"#).unwrap_err();
        assert!(err.to_string().contains("trian"));
        let err = RunConfig::from_json(r#"{"seed": 1, "train": {"eta": -1}}"#)
            .unwrap()
            .resolve(None)
            .unwrap_err();
        assert!(err.to_string().contains("train"));
        assert!(err.to_string().contains("eta"));
    }

    #[test]
    fn hash_ignores_output_path_and_tracks_content() {
        let a = RunConfig::from_json(r#"{"seed": 1}"#).unwrap().resolve(None).unwrap();
        let b = RunConfig { out: Some("elsewhere".into()), ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        let c = a.clone().resolve(Some(2)).unwrap();
        assert_ne!(a.hash(), c.hash());
        let echoed = RunConfig::from_json(&a.to_pretty_json()).unwrap().resolve(None).unwrap();
        assert_eq!(echoed.hash(), a.hash());
    }
}
