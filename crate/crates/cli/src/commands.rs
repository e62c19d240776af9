use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use prefnas_core::benchsynth::{generate, TaskDataset};
use prefnas_core::controller::{predict as predict_model, Preference};
use prefnas_core::metrics::{default_grid, hypervolume, hypervolume_mc, preference_sweep, LossFront, SweepResult};
use prefnas_core::numkernel::{kernel, Rng};
use prefnas_core::searchspace::{resource_usage, CrossEdge};
use prefnas_core::trainer::{train_pipeline, AnchorReport, TrainReport};

use crate::checkpoint::{load_bundle, save_bundle, Bundle};
use crate::config::RunConfig;
use crate::CliError;

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

#[derive(Debug, Clone, Serialize)]
pub struct StageSummary {
    pub steps: usize,
    pub first_window_mean: f64,
    pub last_window_mean: f64,
    pub wall_clock_secs: f64,
    pub fingerprint: String,
}

impl From<&TrainReport> for StageSummary {
    fn from(r: &TrainReport) -> Self {
        Self {
            steps: r.records.len(),
            first_window_mean: r.window_mean(0.1, false),
            last_window_mean: r.window_mean(0.1, true),
            wall_clock_secs: r.wall_clock_secs,
            fingerprint: r.fingerprint.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub seed: u64,
    pub anchor: AnchorReport,
    pub affinity: Vec<Vec<f64>>,
    pub edge: StageSummary,
    pub weight: StageSummary,
    pub wall_clock_secs: f64,
}

pub fn dataset(config: &RunConfig) -> Result<TaskDataset, CliError> {
    Ok(generate(&config.suite)?)
}

/// Anchor, affinity, both hypernet stages; writes checkpoints and reports.
pub fn train(config: &RunConfig, out: &Path) -> Result<TrainSummary, CliError> {
    let started = Instant::now();
    fs::create_dir_all(out)?;
    write(&out.join("config.json"), config.to_pretty_json())?;
    let data = dataset(config)?;
    let bundle = train_pipeline(&config.train, &config.anchor_config(), &data)?;
    save_bundle(out, config, &bundle.anchor, &bundle.affinity, &bundle.edge, &bundle.weight)?;
    let names = data.task_names();
    write(&out.join("affinity.csv"), bundle.affinity.to_csv(&names))?;
    write(&out.join("edge_report.csv"), bundle.edge_report.to_csv())?;
    write(&out.join("weight_report.csv"), bundle.weight_report.to_csv())?;
    let summary = TrainSummary {
        config_hash: config.hash(),
        seed: config.seed(),
        anchor: bundle.anchor_report.clone(),
        affinity: bundle.affinity.matrix.clone(),
        edge: (&bundle.edge_report).into(),
        weight: (&bundle.weight_report).into(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    write(&out.join("train_summary.json"), json(&summary))?;
    Ok(summary)
}

/// Parses a comma-separated preference vector.
pub fn parse_r(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("`--r`: cannot parse `{}` as a number", s.trim())))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictReport {
    pub r: Vec<f64>,
    pub c: f64,
    /// Whether `r` was rescaled onto the simplex.
    pub normalized: bool,
    pub signature: String,
    pub parents: Vec<Vec<usize>>,
    pub active: Vec<Vec<bool>>,
    pub cross_task_edges: Vec<CrossEdge>,
    pub param_count: u64,
    pub flop_count: u64,
    pub ratio_to_anchor: f64,
}

pub fn predict(bundle: &Bundle, r: Vec<f64>, c: f64) -> Result<PredictReport, CliError> {
    if r.len() != bundle.anchor.tasks() {
        return Err(CliError::Config(format!(
            "`--r` needs {} values, got {}",
            bundle.anchor.tasks(),
            r.len()
        )));
    }
    let (pref, normalized) =
        Preference::normalized(r, c).map_err(|e| CliError::Config(format!("invalid preference: {e}")))?;
    if normalized {
        log::warn!("preference rescaled to sum to one: {:?}", pref.r());
    }
    let (tree, _) = predict_model(&bundle.edge, Some(&bundle.weight), &bundle.anchor, &pref)?;
    let usage = resource_usage(&bundle.anchor, &tree);
    Ok(PredictReport {
        r: pref.r().to_vec(),
        c: pref.c(),
        normalized,
        signature: tree.signature(),
        parents: tree.parents().to_vec(),
        active: tree.active_mask().to_vec(),
        cross_task_edges: tree.cross_task_edges(),
        param_count: usage.param_count,
        flop_count: usage.flop_count,
        ratio_to_anchor: usage.ratio_to_anchor,
    })
}

#[derive(Debug, Clone, Serialize)]
struct SweepSummary<'a> {
    config_hash: String,
    grid_points: usize,
    costs: &'a [f64],
    reference: &'a [f64],
    hv: f64,
    mean_uniformity: f64,
    mean_ratio: f64,
    per_c: &'a [prefnas_core::metrics::CostSummary],
}

/// Sweeps the configured grid and writes `sweep.csv` and `sweep_summary.json`.
pub fn sweep(config: &RunConfig, bundle: &Bundle, run_dir: &Path, grid: Option<usize>) -> Result<SweepResult, CliError> {
    let n = config.suite.tasks;
    let points = grid.unwrap_or_else(|| config.eval.grid_points_for(n));
    if points < n {
        return Err(CliError::Config(format!("`--grid` must be at least {n}")));
    }
    let prefs = default_grid(n, points, config.eval.eta, config.seed(), &config.eval.costs)?;
    let data = dataset(config)?;
    let reference = config.eval.reference_for(n);
    let result = preference_sweep(
        &bundle.anchor,
        &bundle.edge,
        Some(&bundle.weight),
        &prefs,
        data.split(config.eval.split),
        &reference,
    )?;
    write(&run_dir.join("sweep.csv"), result.to_csv())?;
    let summary = SweepSummary {
        config_hash: config.hash(),
        grid_points: points,
        costs: &config.eval.costs,
        reference: &reference,
        hv: result.hv,
        mean_uniformity: result.mean_uniformity,
        mean_ratio: result.mean_ratio,
        per_c: &result.per_c,
    };
    write(&run_dir.join("sweep_summary.json"), json(&summary))?;
    Ok(result)
}

/// Exact hypervolume up to four tasks, Monte-Carlo beyond.
pub fn front_hypervolume(front: &LossFront, seed: u64) -> Result<f64, CliError> {
    if front.dims() <= 4 {
        Ok(hypervolume(front)?)
    } else {
        let mut rng = Rng::new(seed).substream("eval").substream("hypervolume");
        Ok(hypervolume_mc(front, 1_000_000, &mut rng)?.value)
    }
}

/// Seeded task preferences for the adaptation comparison.
pub fn hv_preferences(config: &RunConfig, c: f64) -> Result<Vec<Preference>, CliError> {
    let n = config.suite.tasks;
    let mut rng = Rng::new(config.seed()).substream("eval").substream("preferences");
    (0..config.eval.hv_preferences)
        .map(|_| Ok(Preference::new(rng.sample_dirichlet(&vec![config.eval.eta; n])?, c)?))
        .collect()
}

/// Per-task losses on the evaluation split, with or without modulation.
pub fn evaluate(config: &RunConfig, bundle: &Bundle, data: &TaskDataset, pref: &Preference, adapt: bool) -> Result<Vec<f64>, CliError> {
    let weight = adapt.then_some(&bundle.weight);
    let (_, model) = predict_model(&bundle.edge, weight, &bundle.anchor, pref)?;
    let split = data.split(config.eval.split);
    let outputs = model.forward(&split.inputs)?;
    Ok(outputs
        .iter()
        .zip(&split.targets)
        .map(|(o, y)| kernel::mse(o, y))
        .collect::<prefnas_core::Result<Vec<_>>>()?)
}

#[derive(Debug, Clone, Serialize)]
pub struct HvComparison {
    pub c: f64,
    pub preferences: usize,
    pub hv_adapted: f64,
    pub hv_unadapted: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HvReport {
    pub config_hash: String,
    pub reference: Vec<f64>,
    pub per_c: Vec<HvComparison>,
}

/// Hypervolume with and without the weight hypernet at every configured
/// cost; writes `hv_eval.json`.
pub fn eval_hv(config: &RunConfig, bundle: &Bundle, run_dir: &Path) -> Result<HvReport, CliError> {
    let data = dataset(config)?;
    let reference = config.eval.reference_for(config.suite.tasks);
    let mut per_c = Vec::new();
    for &c in &config.eval.costs {
        let prefs = hv_preferences(config, c)?;
        let mut hv = [0.0; 2];
        for (slot, adapt) in [true, false].into_iter().enumerate() {
            let points = prefs
                .iter()
                .map(|p| evaluate(config, bundle, &data, p, adapt))
                .collect::<Result<Vec<_>, _>>()?;
            hv[slot] = front_hypervolume(&LossFront::new(points, reference.clone())?, config.seed())?;
        }
        per_c.push(HvComparison {
            c,
            preferences: prefs.len(),
            hv_adapted: hv[0],
            hv_unadapted: hv[1],
        });
    }
    let report = HvReport {
        config_hash: config.hash(),
        reference,
        per_c,
    };
    write(&run_dir.join("hv_eval.json"), json(&report))?;
    Ok(report)
}

/// Writes the synthetic suite under `<out>/data`.
pub fn gen_data(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    write(&out.join("config.json"), config.to_pretty_json())?;
    dataset(config)?.export(&out.join("data"))?;
    Ok(())
}

pub fn load(config: &RunConfig, run_dir: &Path) -> Result<Bundle, CliError> {
    load_bundle(run_dir, config)
}
