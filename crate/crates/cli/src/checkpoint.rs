use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use prefnas_core::controller::{EdgeHypernet, WeightHypernet};
use prefnas_core::numkernel::{ParamSet, Rng, Tensor};
use prefnas_core::objectives::TaskAffinity;
use prefnas_core::searchspace::AnchorNet;

use crate::config::RunConfig;
use crate::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Anchor,
    Edge,
    Weight,
    Affinity,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::Anchor, Component::Edge, Component::Weight, Component::Affinity];

    pub fn tag(self) -> &'static str {
        match self {
            Component::Anchor => "anchor",
            Component::Edge => "edge",
            Component::Weight => "weight",
            Component::Affinity => "affinity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub component: String,
    pub config_hash: String,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
    /// SHA-256 of the weight blob.
    pub payload_sha256: String,
}

pub fn checkpoint_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("checkpoints")
}

fn paths(dir: &Path, component: Component) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{}.json", component.tag())),
        dir.join(format!("{}.bin", component.tag())),
    )
}

/// Writes `<tag>.json` and `<tag>.bin` (little-endian `f64`, tensors in order).
pub fn save(dir: &Path, component: Component, params: &ParamSet, config: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let payload: Vec<u8> = params.tensors().iter().flat_map(|t| t.to_le_bytes()).collect();
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        component: component.tag().to_string(),
        config_hash: config.hash(),
        seed: config.seed(),
        tensors: params
            .names()
            .iter()
            .zip(params.tensors())
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let (meta_path, blob_path) = paths(dir, component);
    fs::write(blob_path, payload)?;
    fs::write(meta_path, serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n")?;
    Ok(())
}

/// Reads a checkpoint back, rejecting version, hash, and payload mismatches.
pub fn load(dir: &Path, component: Component, config: &RunConfig) -> Result<ParamSet, CliError> {
    let (meta_path, blob_path) = paths(dir, component);
    let bad = |detail: String| CliError::Config(format!("{} checkpoint {}: {detail}", component.tag(), meta_path.display()));
    let text = fs::read_to_string(&meta_path).map_err(|e| bad(e.to_string()))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(bad(format!("format version {} is not {FORMAT_VERSION}", meta.format_version)));
    }
    if meta.component != component.tag() {
        return Err(bad(format!("holds component `{}`", meta.component)));
    }
    if meta.config_hash != config.hash() {
        return Err(bad("config hash does not match the given config".into()));
    }
    let payload = fs::read(&blob_path).map_err(|e| bad(e.to_string()))?;
    if hex::encode(Sha256::digest(&payload)) != meta.payload_sha256 {
        return Err(bad("weight blob digest mismatch".into()));
    }
    let total: usize = meta.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if payload.len() != total * 8 {
        return Err(bad(format!("blob holds {} bytes, expected {}", payload.len(), total * 8)));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut params = ParamSet::new();
    for entry in meta.tensors {
        let len = entry.shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(len).collect();
        let t = Tensor::new(entry.shape, data).map_err(|e| bad(e.to_string()))?;
        params.push(entry.name, t);
    }
    Ok(params)
}

fn affinity_params(affinity: &TaskAffinity) -> ParamSet {
    let mut p = ParamSet::new();
    p.push("matrix", affinity.tensor());
    p.push("samples", Tensor::scalar(affinity.samples as f64));
    p
}

/// Trained components as read from disk.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub anchor: AnchorNet,
    pub affinity: TaskAffinity,
    pub edge: EdgeHypernet,
    pub weight: WeightHypernet,
}

pub fn save_bundle(
    run_dir: &Path,
    config: &RunConfig,
    anchor: &AnchorNet,
    affinity: &TaskAffinity,
    edge: &EdgeHypernet,
    weight: &WeightHypernet,
) -> Result<(), CliError> {
    let dir = checkpoint_dir(run_dir);
    save(&dir, Component::Anchor, &anchor.to_params(), config)?;
    save(&dir, Component::Edge, edge.params(), config)?;
    save(&dir, Component::Weight, weight.params(), config)?;
    save(&dir, Component::Affinity, &affinity_params(affinity), config)
}

fn load_into(target: &mut ParamSet, loaded: ParamSet, component: Component) -> Result<(), CliError> {
    if target.names() != loaded.names() {
        return Err(CliError::Config(format!(
            "{} checkpoint does not match the configured architecture",
            component.tag()
        )));
    }
    for (slot, t) in target.tensors_mut().iter_mut().zip(loaded.tensors()) {
        if slot.shape() != t.shape() {
            return Err(CliError::Config(format!("{} checkpoint has a mismatched shape", component.tag())));
        }
        *slot = t.clone();
    }
    Ok(())
}

pub fn load_bundle(run_dir: &Path, config: &RunConfig) -> Result<Bundle, CliError> {
    let dir = checkpoint_dir(run_dir);
    let anchor_params = load(&dir, Component::Anchor, config)?;
    let anchor = AnchorNet::from_params(config.anchor_config(), &anchor_params)
        .map_err(|e| CliError::Config(format!("anchor checkpoint: {e}")))?;
    let n = anchor.tasks();

    // skeletons only fix names and shapes; every value is overwritten
    let mut edge = EdgeHypernet::new(n, anchor.layers(), config.train.edge_diag_bias, &mut Rng::new(0));
    load_into(edge.params_mut(), load(&dir, Component::Edge, config)?, Component::Edge)?;
    let mut weight = WeightHypernet::new(&anchor, &mut Rng::new(0));
    load_into(weight.params_mut(), load(&dir, Component::Weight, config)?, Component::Weight)?;

    let aff = load(&dir, Component::Affinity, config)?;
    let (matrix, samples) = match (aff.get("matrix"), aff.get("samples")) {
        (Some(m), Some(s)) if m.shape() == [n, n] => (m, s.item() as usize),
        _ => return Err(CliError::Config("affinity checkpoint is malformed".into())),
    };
    let rows = (0..n).map(|i| matrix.row_slice(i).to_vec()).collect();
    let affinity = TaskAffinity::from_matrix(rows, samples).map_err(|e| CliError::Config(format!("affinity checkpoint: {e}")))?;
    Ok(Bundle {
        anchor,
        affinity,
        edge,
        weight,
    })
}
