use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use radtrack::harness::{self, io, sweep, RunConfig, ScenarioSource, TrainRunConfig};
use radtrack::metrics::MetricsConfig;
use radtrack::sim::{self, ScenarioSpec};
use radtrack::{Error, Result};

#[derive(Parser)]
#[command(name = "radtrack", version, about = "Radar 3D multi-object tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate ground truth and detector samples for a scenario.
    Simulate {
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// Scenario TOML.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the motion predictor.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the tracker over a scenario.
    Track {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Replace the configured scenario with a preset.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score tracker output against ground truth.
    Evaluate {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        /// TOML with a `[metrics]` table; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a grid of tracking configurations.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(serde::Deserialize, Default)]
#[serde(default)]
struct MetricsOnly {
    metrics: MetricsConfig,
}

fn config_or_default<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<(T, PathBuf)> {
    match path {
        Some(p) => Ok((harness::load_toml(p)?, base_dir(p))),
        None => Ok((T::default(), PathBuf::from("."))),
    }
}

fn base_dir(config: &Path) -> PathBuf {
    config
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            preset,
            config,
            seed,
            out,
        } => {
            let mut spec: ScenarioSpec = match (&preset, &config) {
                (Some(name), _) => sim::preset(name, seed.unwrap_or(0))?,
                (None, Some(p)) => harness::load_toml(p)?,
                (None, None) => return Err(Error::InvalidInput("simulate needs --preset or --config".into())),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            harness::write_simulation(&out, &spec)?;
        }
        Command::Train { config, seed, out } => {
            let (mut cfg, dir): (TrainRunConfig, _) = config_or_default(&config)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let run = harness::run_train(&cfg, &dir)?;
            harness::write_train(&out, &run)?;
        }
        Command::Track {
            config,
            preset,
            seed,
            out,
        } => {
            let (mut cfg, dir): (RunConfig, _) = config_or_default(&config)?;
            if let Some(name) = preset {
                cfg.scenario = ScenarioSource {
                    seed: cfg.scenario.seed,
                    ..ScenarioSource::preset(&name)
                };
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let run = harness::run_track(&cfg, &dir)?;
            harness::write_track(&out, &run)?;
        }
        Command::Evaluate {
            tracks,
            ground_truth,
            config,
            out,
        } => {
            let (cfg, _): (MetricsOnly, _) = config_or_default(&config)?;
            let file = harness::evaluate_files(&tracks, &ground_truth, &cfg.metrics)?;
            harness::write_metrics(&out, &file)?;
            println!(
                "{}",
                serde_json::json!({"amota": file.report.amota, "amotp": file.report.amotp})
            );
        }
        Command::Sweep {
            config,
            preset,
            seed,
            parallelism,
            out,
        } => {
            let (mut cfg, dir): (sweep::SweepConfig, _) = config_or_default(&config)?;
            if let Some(name) = preset {
                cfg.base.scenario = ScenarioSource::preset(&name);
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(p) = parallelism {
                cfg.parallelism = p;
            }
            let rows = sweep::run_sweep(&cfg, &dir, &out)?;
            let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
            if failed > 0 {
                eprintln!("{}", serde_json::json!({"warning": "failed_cells", "count": failed}));
            }
            io::write_text(&out.join("sweep.toml"), &harness::to_toml(&cfg)?)?;
        }
    }
    Ok(())
}

fn error_json(e: &Error) -> serde_json::Value {
    let mut v = serde_json::json!({"error": e.kind(), "message": e.to_string()});
    if let Error::Frame { frame, .. } = e {
        v["frame"] = (*frame).into();
    }
    v
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
