//! Per-frame tracking pipeline: Kalman prediction (fixed or MC-variance process
//! noise), two-stage association, Kalman correction (fixed or detection-variance
//! measurement noise) and the track life cycle.

use nalgebra::{Matrix4, SMatrix};
use serde::{Deserialize, Serialize};

use crate::association::{associate, AssociationConfig, AssociationResult, TrackPrediction};
use crate::error::{Error, Result};
use crate::fusion::{fuse_frame, FusionConfig, SampleSet};
use crate::geometry::{wrap_angle, Box3D, Covariance7, Detection, KinematicState, Matrix7, Vector7};
use crate::motion::{cv_predict, mc_predict, History, PredictionDistribution, PredictorModel};
use crate::rng::mix_seed;

type Matrix4x7 = SMatrix<f64, 4, 7>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessNoiseMode {
    Fixed,
    McVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementNoiseMode {
    Fixed,
    DetectionVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub process: ProcessNoiseMode,
    pub measurement: MeasurementNoiseMode,
    /// Process noise diagonal over `[x, y, z, yaw, vx, vy, vz]` per step.
    pub q0: [f64; 7],
    /// Measurement noise diagonal over `[x, y, z, yaw]`.
    pub r0: [f64; 4],
    /// Keep adaptive variances from dropping below `q0`.
    pub floor_process: bool,
    /// Keep adaptive variances from dropping below `r0`.
    pub floor_measurement: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            process: ProcessNoiseMode::Fixed,
            measurement: MeasurementNoiseMode::Fixed,
            q0: [2.25e-4, 2.25e-4, 4.5e-5, 0.0025, 0.09, 0.09, 0.009],
            r0: [0.09, 0.09, 0.02, 0.004],
            floor_process: true,
            floor_measurement: true,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q0.iter().chain(&self.r0).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("noise diagonals must be positive and finite"));
        }
        Ok(())
    }

    /// Process noise for one step given the motion prediction's spread.
    pub fn process_noise(&self, prediction: &PredictionDistribution) -> Matrix7 {
        let mut diag = self.q0;
        if self.process == ProcessNoiseMode::McVariance {
            for i in 0..4 {
                let v = prediction.variance[i];
                diag[i] = if self.floor_process { v.max(self.q0[i]) } else { v };
            }
        }
        Matrix7::from_diagonal(&Vector7::from(diag))
    }

    /// Measurement noise for one detection.
    pub fn measurement_noise(&self, det: &Detection) -> Matrix4<f64> {
        let mut diag = self.r0;
        if self.measurement == MeasurementNoiseMode::DetectionVariance {
            let std = [det.box_std[0], det.box_std[1], det.box_std[2], det.box_std[6]];
            for i in 0..4 {
                let v = std[i] * std[i];
                diag[i] = if self.floor_measurement { v.max(self.r0[i]) } else { v };
            }
        }
        Matrix4::from_diagonal(&diag.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Dead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub state: KinematicState,
    pub cov: Covariance7,
    pub history: History,
    /// Exponentially smoothed `[l, w, h]`.
    pub size: [f64; 3],
    pub hits: u32,
    pub misses: u32,
    pub status: TrackStatus,
    pub score: f64,
    pub last_timestamp: f64,
}

impl Track {
    pub fn bbox(&self) -> Box3D {
        Box3D {
            x: self.state.x,
            y: self.state.y,
            z: self.state.z,
            l: self.size[0],
            w: self.size[1],
            h: self.size[2],
            yaw: self.state.yaw,
        }
    }

    pub fn prediction_view(&self) -> TrackPrediction {
        TrackPrediction {
            id: self.id,
            state: self.state,
            cov: self.cov,
        }
    }
}

fn transition(dt: f64) -> Matrix7 {
    let mut f = Matrix7::identity();
    for i in 0..3 {
        f[(i, 4 + i)] = dt;
    }
    f
}

fn measurement_matrix() -> Matrix4x7 {
    let mut h = Matrix4x7::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

/// A priori step: pose from the motion prediction, velocity from the pose
/// change over `dt`, covariance `F P F^T + Q`.
pub fn kf_predict(track: &Track, prediction: &PredictionDistribution, noise: &NoiseConfig, dt: f64) -> Result<Track> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    let old = track.state;
    let new = prediction.mean;
    let state = KinematicState {
        x: new.x,
        y: new.y,
        z: new.z,
        yaw: wrap_angle(new.yaw),
        vx: (new.x - old.x) / dt,
        vy: (new.y - old.y) / dt,
        vz: (new.z - old.z) / dt,
    };
    let f = transition(dt);
    let mut cov = Covariance7(f * track.cov.matrix() * f.transpose() + noise.process_noise(prediction));
    cov.symmetrize();
    Ok(Track {
        state,
        cov,
        ..track.clone()
    })
}

/// Joseph-form Kalman correction over `[x, y, z, yaw]`; also smooths the box
/// size and bumps the hit counter.
pub fn kf_update(track: &Track, det: &Detection, noise: &NoiseConfig) -> Result<Track> {
    let h = measurement_matrix();
    let r = noise.measurement_noise(det);
    let p = *track.cov.matrix();
    let s = h * p * h.transpose() + r;
    let s_inv = ((s + s.transpose()) * 0.5)
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("innovation covariance of track {}", track.id)))?
        .inverse();
    let k = p * h.transpose() * s_inv;
    let x = track.state.to_vector();
    let mut innovation = nalgebra::Vector4::new(
        det.bbox.x - x[0],
        det.bbox.y - x[1],
        det.bbox.z - x[2],
        det.bbox.yaw - x[3],
    );
    innovation[3] = wrap_angle(innovation[3]);
    let posterior = x + k * innovation;
    let i_kh = Matrix7::identity() - k * h;
    let mut cov = Covariance7(i_kh * p * i_kh.transpose() + k * r * k.transpose());
    cov.symmetrize();
    let size = [
        0.5 * track.size[0] + 0.5 * det.bbox.l,
        0.5 * track.size[1] + 0.5 * det.bbox.w,
        0.5 * track.size[2] + 0.5 * det.bbox.h,
    ];
    Ok(Track {
        state: KinematicState::from_vector(&posterior),
        cov,
        size,
        hits: track.hits + 1,
        misses: 0,
        ..track.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LifecycleParams {
    pub min_hits: u32,
    pub max_age: u32,
    pub init_score_min: f64,
    /// Weight of the previous score in the score moving average.
    pub score_alpha: f64,
    /// Standard deviation of the initial velocity components, m/s.
    pub init_velocity_std: f64,
    /// Also emit confirmed tracks that were not matched this frame.
    pub emit_coasting: bool,
}

impl Default for LifecycleParams {
    fn default() -> Self {
        LifecycleParams {
            min_hits: 2,
            max_age: 3,
            init_score_min: 0.3,
            score_alpha: 0.7,
            init_velocity_std: 5.0,
            emit_coasting: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifecycleOutput {
    pub surviving: Vec<Track>,
    pub born: Vec<u64>,
    pub dead: Vec<u64>,
}

/// Hands out track ids; ids are never reused within a run.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdAllocator {
    next: u64,
}

impl IdAllocator {
    pub fn next_id(&mut self) -> u64 {
        let id = self.next;
        self.next += 1;
        id
    }
}

/// Context shared by track births and updates within one frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameContext<'a> {
    pub timestamp: f64,
    pub horizon: usize,
    pub sensor_origin: [f64; 3],
    pub noise: &'a NoiseConfig,
    pub params: &'a LifecycleParams,
}

/// Starts a tentative track from a detection; the velocity is initialized
/// along the line of sight from the Doppler reading.
pub fn spawn_track(id: u64, det: &Detection, ctx: &FrameContext) -> Result<Track> {
    let b = det.bbox;
    let los = [
        b.x - ctx.sensor_origin[0],
        b.y - ctx.sensor_origin[1],
        b.z - ctx.sensor_origin[2],
    ];
    let range = (los[0] * los[0] + los[1] * los[1] + los[2] * los[2]).sqrt();
    let velocity = if range > 0.0 {
        los.map(|c| det.doppler * c / range)
    } else {
        [0.0; 3]
    };
    let r = ctx.noise.measurement_noise(det);
    let v0 = ctx.params.init_velocity_std.powi(2);
    let cov = Covariance7::from_diagonal(&[r[(0, 0)], r[(1, 1)], r[(2, 2)], r[(3, 3)], v0, v0, v0]);
    let mut history = History::new(ctx.horizon)?;
    history.push(ctx.timestamp, b.pose())?;
    Ok(Track {
        id,
        state: KinematicState::from_pose(b.pose(), velocity),
        cov,
        history,
        size: [b.l, b.w, b.h],
        hits: 1,
        misses: 0,
        status: if ctx.params.min_hits <= 1 {
            TrackStatus::Confirmed
        } else {
            TrackStatus::Tentative
        },
        score: det.confidence,
        last_timestamp: ctx.timestamp,
    })
}

/// Applies the association outcome to a priori tracks: matched tracks are
/// corrected, unmatched tracks age and die past `max_age` consecutive misses,
/// confident leftover detections start tentative tracks.
pub fn lifecycle_step(
    tracks: Vec<Track>,
    assoc: &AssociationResult,
    detections: &[Detection],
    ctx: &FrameContext,
    ids: &mut IdAllocator,
) -> Result<LifecycleOutput> {
    let params = ctx.params;
    let mut surviving = Vec::with_capacity(tracks.len());
    let mut dead = Vec::new();
    for track in tracks {
        let matched = assoc.matches.iter().find(|m| m.track_id == track.id);
        let mut next = match matched {
            Some(m) => {
                let det = detections
                    .get(m.detection)
                    .ok_or_else(|| Error::invalid(format!("match refers to missing detection {}", m.detection)))?;
                let mut t = kf_update(&track, det, ctx.noise)?;
                t.score = params.score_alpha * t.score + (1.0 - params.score_alpha) * det.confidence;
                if t.status == TrackStatus::Tentative && t.hits >= params.min_hits {
                    t.status = TrackStatus::Confirmed;
                }
                t
            }
            None => Track {
                misses: track.misses + 1,
                ..track
            },
        };
        if next.misses > params.max_age {
            next.status = TrackStatus::Dead;
            dead.push(next.id);
            continue;
        }
        next.history.push(ctx.timestamp, next.state.pose())?;
        next.last_timestamp = ctx.timestamp;
        surviving.push(next);
    }
    let mut born = Vec::new();
    for &j in &assoc.unmatched_detections {
        let det = &detections[j];
        if det.confidence >= params.init_score_min {
            let id = ids.next_id();
            surviving.push(spawn_track(id, det, ctx)?);
            born.push(id);
        }
    }
    Ok(LifecycleOutput { surviving, born, dead })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionMode {
    Cv,
    Predictor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub motion: MotionMode,
    pub horizon: usize,
    pub n_p: usize,
    pub noise: NoiseConfig,
    pub association: AssociationConfig,
    pub lifecycle: LifecycleParams,
    pub fusion: FusionConfig,
    pub sensor_origin: [f64; 3],
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            motion: MotionMode::Cv,
            horizon: 3,
            n_p: 10,
            noise: NoiseConfig::default(),
            association: AssociationConfig::default(),
            lifecycle: LifecycleParams::default(),
            fusion: FusionConfig::default(),
            sensor_origin: [0.0; 3],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackSnapshot {
    pub id: u64,
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub velocity: [f64; 3],
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame: usize,
    pub timestamp: f64,
    pub tracks: Vec<TrackSnapshot>,
    /// Matches made by the Doppler stage in this frame.
    pub stage2_matches: usize,
}

/// Owns the mutable state of one sequence.
pub struct Tracker<'m> {
    cfg: TrackerConfig,
    model: Option<&'m PredictorModel>,
    tracks: Vec<Track>,
    ids: IdAllocator,
}

impl<'m> Tracker<'m> {
    pub fn new(cfg: TrackerConfig, model: Option<&'m PredictorModel>) -> Result<Self> {
        cfg.noise.validate()?;
        cfg.association.validate()?;
        if cfg.horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if cfg.motion == MotionMode::Predictor {
            let m = model.ok_or_else(|| Error::invalid("predictor motion mode needs a model"))?;
            m.validate()?;
            if cfg.n_p == 0 {
                return Err(Error::invalid("n_p must be at least 1"));
            }
        }
        Ok(Tracker {
            cfg,
            model,
            tracks: Vec::new(),
            ids: IdAllocator::default(),
        })
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    fn predict_track(&self, track: &Track, frame: usize, dt: f64) -> Result<Track> {
        let prediction = match (self.cfg.motion, self.model) {
            (MotionMode::Predictor, Some(model)) if track.history.len() >= 2 => {
                let seed = mix_seed(mix_seed(self.cfg.seed, frame as u64), track.id);
                mc_predict(model, &track.history, self.cfg.n_p, seed)?
            }
            _ => PredictionDistribution::deterministic(cv_predict(&track.state, dt)?.pose()),
        };
        kf_predict(track, &prediction, &self.cfg.noise, dt)
    }

    /// Processes one frame of detector samples.
    pub fn step(&mut self, set: &SampleSet) -> Result<FrameResult> {
        let detections = fuse_frame(set, &self.cfg.fusion);
        let t = set.timestamp;
        let predicted = self
            .tracks
            .iter()
            .map(|tr| {
                let dt = t - tr.last_timestamp;
                self.predict_track(tr, set.frame, dt)
            })
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<TrackPrediction> = predicted.iter().map(Track::prediction_view).collect();
        let r: Vec<Matrix4<f64>> = detections.iter().map(|d| self.cfg.noise.measurement_noise(d)).collect();
        let assoc = associate(&views, &detections, &r, self.cfg.sensor_origin, &self.cfg.association)?;
        let ctx = FrameContext {
            timestamp: t,
            horizon: self.cfg.horizon,
            sensor_origin: self.cfg.sensor_origin,
            noise: &self.cfg.noise,
            params: &self.cfg.lifecycle,
        };
        let out = lifecycle_step(predicted, &assoc, &detections, &ctx, &mut self.ids)?;
        self.tracks = out.surviving;
        debug_assert!(self.tracks.iter().all(|t| t.cov.is_symmetric() && t.cov.is_psd()));
        let emit_coasting = self.cfg.lifecycle.emit_coasting;
        let tracks = self
            .tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Confirmed && (emit_coasting || t.misses == 0))
            .map(|t| TrackSnapshot {
                id: t.id,
                bbox: t.bbox(),
                velocity: [t.state.vx, t.state.vy, t.state.vz],
                score: t.score,
            })
            .collect();
        Ok(FrameResult {
            frame: set.frame,
            timestamp: t,
            tracks,
            stage2_matches: assoc.stage2_matches(),
        })
    }
}

/// Runs the tracker over a time-ordered sequence.
pub fn track_sequence(
    frames: &[SampleSet],
    cfg: &TrackerConfig,
    model: Option<&PredictorModel>,
) -> Result<Vec<FrameResult>> {
    let mut tracker = Tracker::new(cfg.clone(), model)?;
    let mut out = Vec::with_capacity(frames.len());
    let mut last_t = f64::NEG_INFINITY;
    for set in frames {
        let wrap = |e: Error| Error::Frame {
            frame: set.frame,
            source: Box::new(e),
        };
        if !(set.timestamp > last_t) {
            return Err(wrap(Error::invalid("frames must be strictly time-ordered")));
        }
        last_t = set.timestamp;
        out.push(tracker.step(set).map_err(wrap)?);
    }
    Ok(out)
}
