//! Grid experiments over motion model, horizon, association and noise modes.
//!
//! Each cell gets its own directory holding the fully resolved `run.toml`,
//! so any row can be reproduced with a standalone `track` + `evaluate`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    evaluate_files, io, resolve, run_track, run_train, to_toml, write_metrics, write_track, RunConfig, TrainRunConfig,
};
use super::{GROUND_TRUTH_FILE, TRACKS_FILE};
use crate::association::AssociationMode;
use crate::error::{Error, Result};
use crate::rng::seed_from_key;
use crate::tracking::{MeasurementNoiseMode, MotionMode, ProcessNoiseMode};

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_SVG: &str = "amota_vs_horizon.svg";

/// Axis values; an empty axis falls back to the base config's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub motion: Vec<MotionMode>,
    pub horizon: Vec<usize>,
    pub association: Vec<AssociationMode>,
    pub process_noise: Vec<ProcessNoiseMode>,
    pub measurement_noise: Vec<MeasurementNoiseMode>,
    pub floor_measurement: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub seed: u64,
    /// Worker threads; 0 picks the number of cores.
    pub parallelism: usize,
    pub base: RunConfig,
    pub grid: Grid,
    /// Used to train one predictor per horizon when `base.model` is unset.
    pub train: TrainRunConfig,
    pub svg: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            seed: 0,
            parallelism: 0,
            base: RunConfig::default(),
            grid: Grid::default(),
            train: TrainRunConfig::default(),
            svg: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub motion: MotionMode,
    pub horizon: usize,
    pub association: AssociationMode,
    pub process_noise: ProcessNoiseMode,
    pub measurement_noise: MeasurementNoiseMode,
    pub floor_measurement: bool,
}

fn tag<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => "?".into(),
    }
}

impl Cell {
    /// Stable identifier; rows sort by it and cell seeds derive from it.
    pub fn key(&self) -> String {
        format!(
            "{}/n{:02}/{}/{}/{}{}",
            tag(&self.motion),
            self.horizon,
            tag(&self.association),
            tag(&self.process_noise),
            tag(&self.measurement_noise),
            if self.floor_measurement { "" } else { "_unfloored" }
        )
    }

    pub fn dir_name(&self) -> String {
        self.key().replace('/', "__")
    }
}

fn axis<T: Clone>(values: &[T], fallback: T) -> Vec<T> {
    if values.is_empty() {
        vec![fallback]
    } else {
        values.to_vec()
    }
}

/// Cartesian product of the grid, sorted by key with duplicates removed.
pub fn cells(cfg: &SweepConfig) -> Vec<Cell> {
    let t = &cfg.base.tracker;
    let g = &cfg.grid;
    let mut out = Vec::new();
    for motion in axis(&g.motion, t.motion) {
        for horizon in axis(&g.horizon, t.horizon) {
            for association in axis(&g.association, t.association.mode) {
                for process_noise in axis(&g.process_noise, t.noise.process) {
                    for measurement_noise in axis(&g.measurement_noise, t.noise.measurement) {
                        for floor_measurement in axis(&g.floor_measurement, t.noise.floor_measurement) {
                            out.push(Cell {
                                motion,
                                horizon,
                                association,
                                process_noise,
                                measurement_noise,
                                floor_measurement,
                            });
                        }
                    }
                }
            }
        }
    }
    out.sort_by_key(Cell::key);
    out.dedup_by_key(|c| c.key());
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: String,
    pub motion: String,
    pub horizon: usize,
    pub association: String,
    pub process_noise: String,
    pub measurement_noise: String,
    pub floor_measurement: bool,
    pub amota: Option<f64>,
    pub amotp: Option<f64>,
    pub tp: Option<usize>,
    pub fp: Option<usize>,
    #[serde(rename = "fn")]
    pub fn_: Option<usize>,
    pub ids: Option<usize>,
    pub error: String,
}

fn model_rel_path(horizon: usize) -> PathBuf {
    PathBuf::from("models").join(format!("model_n{horizon:02}.json"))
}

/// The standalone run configuration a cell executes, with paths relative to
/// the cell directory two levels below the sweep output.
pub fn cell_config(cfg: &SweepConfig, cell: &Cell, base_dir: &Path) -> RunConfig {
    let mut run = cfg.base.clone();
    run.seed = seed_from_key(cfg.seed, &cell.key());
    run.scenario.seed = Some(cfg.base.scenario.seed.unwrap_or(cfg.seed));
    for p in [
        &mut run.scenario.path,
        &mut run.scenario.samples,
        &mut run.scenario.ground_truth,
    ]
    .into_iter()
    .flatten()
    {
        *p = absolute(&resolve(base_dir, p));
    }
    let t = &mut run.tracker;
    t.motion = cell.motion;
    t.horizon = cell.horizon;
    t.association.mode = cell.association;
    t.noise.process = cell.process_noise;
    t.noise.measurement = cell.measurement_noise;
    t.noise.floor_measurement = cell.floor_measurement;
    run.model = match (cell.motion, &cfg.base.model) {
        (MotionMode::Cv, _) => None,
        (MotionMode::Predictor, Some(p)) => Some(absolute(&resolve(base_dir, p))),
        (MotionMode::Predictor, None) => Some(Path::new("../..").join(model_rel_path(cell.horizon))),
    };
    run
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn run_cell(
    cfg: &SweepConfig,
    cell: &Cell,
    base_dir: &Path,
    out_dir: &Path,
    train_errors: &BTreeMap<usize, String>,
) -> SweepRow {
    let mut row = SweepRow {
        cell: cell.key(),
        motion: tag(&cell.motion),
        horizon: cell.horizon,
        association: tag(&cell.association),
        process_noise: tag(&cell.process_noise),
        measurement_noise: tag(&cell.measurement_noise),
        floor_measurement: cell.floor_measurement,
        amota: None,
        amotp: None,
        tp: None,
        fp: None,
        fn_: None,
        ids: None,
        error: String::new(),
    };
    let result = (|| -> Result<()> {
        if cell.motion == MotionMode::Predictor {
            if let Some(e) = train_errors.get(&cell.horizon) {
                return Err(Error::invalid(format!("training failed: {e}")));
            }
        }
        let dir = out_dir.join("cells").join(cell.dir_name());
        let run_cfg = cell_config(cfg, cell, base_dir);
        io::write_text(&dir.join("run.toml"), &to_toml(&run_cfg)?)?;
        let run = run_track(&run_cfg, &dir)?;
        write_track(&dir, &run)?;
        if run.ground_truth.is_none() {
            return Err(Error::invalid("scenario has no ground truth to evaluate against"));
        }
        let m = evaluate_files(&dir.join(TRACKS_FILE), &dir.join(GROUND_TRUTH_FILE), &run_cfg.metrics)?;
        write_metrics(&dir, &m)?;
        let r = &m.report;
        row.amota = Some(r.amota);
        row.amotp = Some(r.amotp);
        row.tp = Some(r.best.tp);
        row.fp = Some(r.best.fp);
        row.fn_ = Some(r.best.fn_);
        row.ids = Some(r.best.ids);
        Ok(())
    })();
    if let Err(e) = result {
        row.error = e.to_string();
    }
    row
}

/// Runs every cell, writes `sweep.csv` (and optionally an AMOTA-vs-horizon
/// chart) and returns the rows sorted by cell key. Failed cells keep their
/// row with the error message.
pub fn run_sweep(cfg: &SweepConfig, base_dir: &Path, out_dir: &Path) -> Result<Vec<SweepRow>> {
    let cells = cells(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;

    let horizons: BTreeSet<usize> = cells
        .iter()
        .filter(|c| c.motion == MotionMode::Predictor && cfg.base.model.is_none())
        .map(|c| c.horizon)
        .collect();
    let trained: Vec<(usize, Result<()>)> = pool.install(|| {
        horizons
            .par_iter()
            .map(|&h| {
                let mut t = cfg.train.clone();
                t.horizon = h;
                let r = run_train(&t, base_dir).and_then(|run| {
                    io::save_model(&out_dir.join(model_rel_path(h)), &run.outcome.model, Some(run.manifest))
                });
                (h, r)
            })
            .collect()
    });
    let train_errors: BTreeMap<usize, String> = trained
        .into_iter()
        .filter_map(|(h, r)| r.err().map(|e| (h, e.to_string())))
        .collect();

    let rows: Vec<SweepRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| run_cell(cfg, c, base_dir, out_dir, &train_errors))
            .collect()
    });
    io::write_csv(&out_dir.join(SWEEP_CSV), &rows)?;
    if cfg.svg {
        io::write_text(&out_dir.join(SWEEP_SVG), &amota_chart(&rows))?;
    }
    Ok(rows)
}

fn amota_chart(rows: &[SweepRow]) -> String {
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        if let Some(a) = r.amota {
            let name = format!(
                "{} {} {}/{}{}",
                r.motion,
                r.association,
                r.process_noise,
                r.measurement_noise,
                if r.floor_measurement { "" } else { " unfloored" }
            );
            series.entry(name).or_default().push((r.horizon as f64, a));
        }
    }
    let series: Vec<(String, Vec<(f64, f64)>)> = series.into_iter().collect();
    super::plot::line_chart("AMOTA vs input horizon", "horizon n", "AMOTA", &series)
}
