//! Configuration, file formats and experiment orchestration behind the CLI.
//!
//! Every command is a pure function of its configuration and seeds: outputs
//! carry a [`io::Manifest`] with the resolved config, its SHA-256 and the
//! seeds used, and rerunning produces byte-identical files.

pub mod io;
pub mod plot;
pub mod sweep;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::SampleSet;
use crate::metrics::{self, MetricsConfig, MetricsReport};
use crate::motion::{train_predictor, PredictorModel, TrainConfig, TrainOutcome, TrainingSample};
use crate::rng::seed_from_key;
use crate::sim::{self, GroundTruthFrame, ScenarioSpec};
use crate::tracking::{track_sequence, FrameResult, MotionMode, TrackerConfig};
use io::Manifest;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";
pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const TRACKS_FILE: &str = "tracks.jsonl";
pub const MODEL_FILE: &str = "model.json";
pub const LOSS_CSV: &str = "loss.csv";
pub const LOSS_SVG: &str = "loss.svg";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";

pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e))
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string_pretty(value).map_err(|e| Error::format("toml", e))
}

/// Relative paths in a config file are taken relative to that file.
pub fn resolve(base_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

/// Where a run gets its detector samples from. Exactly one of `preset`,
/// `path` (a scenario TOML) or `samples` (a samples JSONL) must be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSource {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<PathBuf>,
    /// Optional ground truth accompanying `samples`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    /// Scenario seed; defaults to the run seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub spec: Option<ScenarioSpec>,
    pub ground_truth: Option<Vec<GroundTruthFrame>>,
    pub samples: Vec<SampleSet>,
    pub sensor_origin: [f64; 3],
}

impl ScenarioSource {
    pub fn preset(name: &str) -> Self {
        ScenarioSource {
            preset: Some(name.to_string()),
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let set = [self.preset.is_some(), self.path.is_some(), self.samples.is_some()];
        if set.iter().filter(|b| **b).count() != 1 {
            return Err(Error::invalid("scenario needs exactly one of preset, path or samples"));
        }
        if self.ground_truth.is_some() && self.samples.is_none() {
            return Err(Error::invalid(
                "scenario.ground_truth only applies together with scenario.samples",
            ));
        }
        Ok(())
    }

    pub fn spec(&self, run_seed: u64, base_dir: &Path) -> Result<Option<ScenarioSpec>> {
        self.validate()?;
        let seed = self.seed.unwrap_or(run_seed);
        if let Some(name) = &self.preset {
            return sim::preset(name, seed).map(Some);
        }
        if let Some(p) = &self.path {
            let mut spec: ScenarioSpec = load_toml(&resolve(base_dir, p))?;
            spec.seed = seed;
            return Ok(Some(spec));
        }
        Ok(None)
    }

    pub fn load(&self, run_seed: u64, base_dir: &Path) -> Result<LoadedScenario> {
        if let Some(spec) = self.spec(run_seed, base_dir)? {
            let (gt, samples) = sim::generate(&spec)?;
            return Ok(LoadedScenario {
                sensor_origin: spec.sensor_origin,
                spec: Some(spec),
                ground_truth: Some(gt),
                samples,
            });
        }
        let path = resolve(base_dir, self.samples.as_ref().expect("validated"));
        let (manifest, samples) = io::read_jsonl::<SampleSet>(&path)?;
        let spec: Option<ScenarioSpec> = manifest.and_then(|m| serde_json::from_value(m.config).ok());
        let ground_truth = match &self.ground_truth {
            Some(p) => Some(io::read_jsonl(&resolve(base_dir, p))?.1),
            None => None,
        };
        Ok(LoadedScenario {
            sensor_origin: spec.as_ref().map_or([0.0; 3], |s| s.sensor_origin),
            spec,
            ground_truth,
            samples,
        })
    }
}

fn seeds(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Writes `ground_truth.jsonl` and `samples.jsonl` for a scenario.
pub fn write_simulation(out_dir: &Path, spec: &ScenarioSpec) -> Result<(Vec<GroundTruthFrame>, Vec<SampleSet>)> {
    let (gt, samples) = sim::generate(spec)?;
    let s = seeds(&[("scenario", spec.seed)]);
    io::write_jsonl(
        &out_dir.join(GROUND_TRUTH_FILE),
        &Manifest::new("ground_truth", spec, s.clone())?,
        &gt,
    )?;
    io::write_jsonl(
        &out_dir.join(SAMPLES_FILE),
        &Manifest::new("samples", spec, s)?,
        &samples,
    )?;
    Ok((gt, samples))
}

/// One tracking run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; the scenario and the dropout sampling derive from it.
    pub seed: u64,
    pub scenario: ScenarioSource,
    /// Predictor model file, needed when `tracker.motion = "predictor"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    pub tracker: TrackerConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            scenario: ScenarioSource::preset("crossing_doppler"),
            model: None,
            tracker: TrackerConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn tracker_seed(&self) -> u64 {
        seed_from_key(self.seed, "tracker")
    }

    pub fn scenario_seed(&self) -> u64 {
        self.scenario.seed.unwrap_or(self.seed)
    }
}

#[derive(Debug, Clone)]
pub struct TrackRun {
    pub frames: Vec<FrameResult>,
    pub ground_truth: Option<Vec<GroundTruthFrame>>,
    pub scenario: Option<ScenarioSpec>,
    pub manifest: Manifest,
}

#[derive(Serialize)]
struct TrackProvenance<'a> {
    run: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_sha256: Option<String>,
}

/// Loads the scenario and model, then tracks the whole sequence.
pub fn run_track(cfg: &RunConfig, base_dir: &Path) -> Result<TrackRun> {
    let scenario = cfg.scenario.load(cfg.seed, base_dir)?;
    let model = match (&cfg.model, cfg.tracker.motion) {
        (Some(p), MotionMode::Predictor) => Some(io::load_model(&resolve(base_dir, p))?),
        (None, MotionMode::Predictor) => return Err(Error::invalid("predictor motion mode needs `model`")),
        _ => None,
    };
    run_track_with(cfg, scenario, model.as_ref())
}

/// Like [`run_track`] with the scenario and model already in memory.
pub fn run_track_with(cfg: &RunConfig, scenario: LoadedScenario, model: Option<&PredictorModel>) -> Result<TrackRun> {
    let mut tracker = cfg.tracker.clone();
    tracker.sensor_origin = scenario.sensor_origin;
    tracker.seed = cfg.tracker_seed();
    let frames = track_sequence(&scenario.samples, &tracker, model)?;
    let model_sha256 =
        model.map(|m| io::sha256_hex(&serde_json::to_value(m.to_file_format()).expect("model serializes")));
    let mut resolved = cfg.clone();
    resolved.scenario.seed = Some(cfg.scenario_seed());
    let manifest = Manifest::new(
        "tracks",
        &TrackProvenance {
            run: &resolved,
            model_sha256,
        },
        seeds(&[
            ("seed", cfg.seed),
            ("scenario", cfg.scenario_seed()),
            ("tracker", tracker.seed),
        ]),
    )?;
    Ok(TrackRun {
        frames,
        ground_truth: scenario.ground_truth,
        scenario: scenario.spec,
        manifest,
    })
}

/// Writes `tracks.jsonl`, plus `ground_truth.jsonl` when the run simulated
/// its own scenario.
pub fn write_track(out_dir: &Path, run: &TrackRun) -> Result<()> {
    io::write_jsonl(&out_dir.join(TRACKS_FILE), &run.manifest, &run.frames)?;
    if let (Some(gt), Some(spec)) = (&run.ground_truth, &run.scenario) {
        let m = Manifest::new("ground_truth", spec, seeds(&[("scenario", spec.seed)]))?;
        io::write_jsonl(&out_dir.join(GROUND_TRUTH_FILE), &m, gt)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub schema_version: u32,
    pub manifest: Manifest,
    pub report: MetricsReport,
}

#[derive(Serialize)]
struct EvalProvenance<'a> {
    metrics: &'a MetricsConfig,
    tracks_config_sha256: Option<String>,
    ground_truth_config_sha256: Option<String>,
}

pub fn evaluate_files(tracks: &Path, ground_truth: &Path, cfg: &MetricsConfig) -> Result<MetricsFile> {
    let (tm, frames) = io::read_jsonl::<FrameResult>(tracks)?;
    let (gm, gt) = io::read_jsonl::<GroundTruthFrame>(ground_truth)?;
    let report = metrics::evaluate(&frames, &gt, cfg)?;
    let manifest = Manifest::new(
        "metrics",
        &EvalProvenance {
            metrics: cfg,
            tracks_config_sha256: tm.map(|m| m.config_sha256),
            ground_truth_config_sha256: gm.map(|m| m.config_sha256),
        },
        BTreeMap::new(),
    )?;
    Ok(MetricsFile {
        schema_version: io::SCHEMA_VERSION,
        manifest,
        report,
    })
}

/// `metrics.json` plus the per-recall table as `metrics.csv`.
pub fn write_metrics(out_dir: &Path, file: &MetricsFile) -> Result<()> {
    io::write_json(&out_dir.join(METRICS_JSON), file)?;
    io::write_csv(&out_dir.join(METRICS_CSV), &file.report.rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingScenarios {
    pub preset: String,
    pub seeds: Vec<u64>,
}

impl Default for TrainingScenarios {
    fn default() -> Self {
        TrainingScenarios {
            preset: "regime_switch".into(),
            seeds: (1000..1008).collect(),
        }
    }
}

/// Predictor training run: data comes from ground-truth files, simulated
/// presets, or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub horizon: usize,
    pub datasets: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenarios: Option<TrainingScenarios>,
    pub train: TrainConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            horizon: 3,
            datasets: Vec::new(),
            scenarios: Some(TrainingScenarios::default()),
            train: TrainConfig::default(),
        }
    }
}

pub fn build_training_set(cfg: &TrainRunConfig, base_dir: &Path) -> Result<Vec<TrainingSample>> {
    let mut out = Vec::new();
    for p in &cfg.datasets {
        let (_, gt) = io::read_jsonl::<GroundTruthFrame>(&resolve(base_dir, p))?;
        out.extend(sim::export_training_set(&gt, cfg.horizon)?);
    }
    if let Some(s) = &cfg.scenarios {
        for &seed in &s.seeds {
            let (gt, _) = sim::generate(&sim::preset(&s.preset, seed)?)?;
            out.extend(sim::export_training_set(&gt, cfg.horizon)?);
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("training configuration yields no samples"));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub outcome: TrainOutcome,
    pub manifest: Manifest,
}

pub fn run_train(cfg: &TrainRunConfig, base_dir: &Path) -> Result<TrainRun> {
    let data = build_training_set(cfg, base_dir)?;
    let outcome = train_predictor(&data, &cfg.train)?;
    let manifest = Manifest::new("model", cfg, seeds(&[("train", cfg.train.seed)]))?;
    Ok(TrainRun { outcome, manifest })
}

#[derive(Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub loss: f64,
}

/// `model.json`, `loss.csv` and a `loss.svg` chart.
pub fn write_train(out_dir: &Path, run: &TrainRun) -> Result<()> {
    io::save_model(
        &out_dir.join(MODEL_FILE),
        &run.outcome.model,
        Some(run.manifest.clone()),
    )?;
    let rows: Vec<LossRow> = run
        .outcome
        .losses
        .iter()
        .enumerate()
        .map(|(epoch, &loss)| LossRow { epoch, loss })
        .collect();
    io::write_csv(&out_dir.join(LOSS_CSV), &rows)?;
    let points = rows.iter().map(|r| (r.epoch as f64, r.loss)).collect();
    let svg = plot::line_chart("Training loss", "epoch", "loss", &[("loss".to_string(), points)]);
    io::write_text(&out_dir.join(LOSS_SVG), &svg)
}
