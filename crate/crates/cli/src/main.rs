use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prefnas_cli::commands;
use prefnas_cli::config::RunConfig;
use prefnas_cli::CliError;

#[derive(Parser)]
#[command(name = "prefnas", version, about = "Preference-conditioned multi-task architecture controller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output (or run) directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the anchor, the affinity and both hypernetworks.
    Train(Common),
    /// Predict the architecture for one preference.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Task preference, comma separated.
        #[arg(long)]
        r: String,
        /// Cost preference in [0, 1].
        #[arg(long)]
        c: f64,
    },
    /// Evaluate a grid of preferences.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Simplex points per cost value.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Compare hypervolume with and without cross-task adaptation.
    EvalHv(Common),
    /// Export the synthetic task suite.
    GenData(Common),
}

/// Config for a fresh run: `--config` is mandatory.
fn fresh(common: &Common) -> Result<(RunConfig, PathBuf), CliError> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("`--config` is required".into()))?;
    let config = RunConfig::read(path)?.resolve(common.seed)?;
    let out = common
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("prefnas-run"));
    Ok((config, out))
}

/// Config for an existing run directory; defaults to its echoed config.
fn existing(common: &Common) -> Result<(RunConfig, PathBuf), CliError> {
    let explicit = common.config.as_ref().map(|p| RunConfig::read(p)).transpose()?;
    let run_dir = common
        .out
        .clone()
        .or_else(|| explicit.as_ref().and_then(|c| c.out.clone()))
        .ok_or_else(|| CliError::Config("`--out` must name a trained run directory".into()))?;
    let config = match explicit {
        Some(c) => c,
        None => RunConfig::read(&run_dir.join("config.json"))?,
    };
    Ok((config.resolve(common.seed)?, run_dir))
}

fn print_json<T: serde::Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    // a closed pipe is not an error for a one-shot report
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(common) => {
            let (config, out) = fresh(&common)?;
            log::info!("training into {}", out.display());
            let summary = commands::train(&config, &out)?;
            log::info!("done in {:.1}s", summary.wall_clock_secs);
        }
        Command::Predict { common, r, c } => {
            let (config, dir) = existing(&common)?;
            let bundle = commands::load(&config, &dir)?;
            print_json(&commands::predict(&bundle, commands::parse_r(&r)?, c)?);
        }
        Command::Sweep { common, grid } => {
            let (config, dir) = existing(&common)?;
            let bundle = commands::load(&config, &dir)?;
            let result = commands::sweep(&config, &bundle, &dir, grid)?;
            for s in &result.per_c {
                log::info!("c={}: mean ratio {:.4}, hv {:.4}, mean uniformity {:.4}", s.c, s.mean_ratio, s.hv, s.mean_uniformity);
            }
            log::info!("wrote {}", Path::new(&dir).join("sweep.csv").display());
        }
        Command::EvalHv(common) => {
            let (config, dir) = existing(&common)?;
            let bundle = commands::load(&config, &dir)?;
            print_json(&commands::eval_hv(&config, &bundle, &dir)?);
        }
        Command::GenData(common) => {
            let (config, out) = fresh(&common)?;
            commands::gen_data(&config, &out)?;
            log::info!("wrote {}", out.join("data").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Info)
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
