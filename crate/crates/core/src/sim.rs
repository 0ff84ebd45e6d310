//! Synthetic radar scenarios: ground-truth trajectories driven by maneuver
//! schedules, and per-frame Monte-Carlo detector samples with Doppler,
//! misses and clutter.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::SampleSet;
use crate::geometry::{radial_velocity, wrap_angle, Box3D, Detection, KinematicState, Pose};
use crate::motion::{History, TrainingSample};
use crate::rng::{mix_seed, rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Maneuver {
    ConstantVelocity,
    ConstantTurn {
        /// rad/s, positive is counter-clockwise.
        yaw_rate: f64,
    },
    /// Brake to a standstill, wait, then accelerate back up.
    StopGo {
        decel: f64,
        hold_frames: usize,
        accel: f64,
        resume_speed: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub frames: usize,
    pub maneuver: Maneuver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: u64,
    /// Initial position and heading.
    pub start: Pose,
    pub speed: f64,
    /// `[l, w, h]`.
    pub size: [f64; 3],
    /// Executed in order; the object keeps constant velocity afterwards.
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Per-frame detector error shared by all passes, over `[x, y, z, yaw]`.
    pub pose_sigma: [f64; 4],
    pub size_sigma: f64,
    pub doppler_sigma: f64,
    /// Extra per-pass jitter over `[x, y, z, yaw]`, emulating dropout spread.
    pub jitter_sigma: [f64; 4],
    /// Log-normal spread of a per-object, per-frame difficulty factor that
    /// scales both the shared error and the jitter.
    pub difficulty_sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            pose_sigma: [0.2, 0.2, 0.1, 0.03],
            size_sigma: 0.1,
            doppler_sigma: 0.3,
            jitter_sigma: [0.15, 0.15, 0.05, 0.02],
            difficulty_sigma: 0.3,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        NoiseModel {
            pose_sigma: [0.0; 4],
            size_sigma: 0.0,
            doppler_sigma: 0.0,
            jitter_sigma: [0.0; 4],
            difficulty_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub name: String,
    pub duration_frames: usize,
    pub frame_rate: f64,
    pub objects: Vec<ObjectSpec>,
    pub sensor_origin: [f64; 3],
    pub noise: NoiseModel,
    /// Mean number of false-alarm sources per frame (Poisson).
    pub clutter_rate: f64,
    /// Probability that each pass reports a given false-alarm source.
    pub clutter_pass_prob: f64,
    /// Per-pass probability of reporting a true object.
    pub detection_prob: f64,
    /// Probability that a true object shows up in a frame at all; a miss
    /// removes it from every pass (occlusion, fading).
    pub frame_detection_prob: f64,
    pub n_d: usize,
    /// `[x_min, x_max, y_min, y_max]` for clutter placement.
    pub clutter_region: [f64; 4],
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            name: "custom".into(),
            duration_frames: 100,
            frame_rate: 10.0,
            objects: Vec::new(),
            sensor_origin: [0.0; 3],
            noise: NoiseModel::default(),
            clutter_rate: 1.0,
            clutter_pass_prob: 0.3,
            detection_prob: 0.95,
            frame_detection_prob: 1.0,
            n_d: 10,
            clutter_region: [5.0, 100.0, -40.0, 40.0],
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(Error::invalid("frame rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.detection_prob) {
            return Err(Error::invalid("detection probability must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.frame_detection_prob) {
            return Err(Error::invalid("frame detection probability must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.clutter_pass_prob) {
            return Err(Error::invalid("clutter pass probability must lie in [0, 1]"));
        }
        if !(self.clutter_rate >= 0.0 && self.clutter_rate.is_finite()) {
            return Err(Error::invalid("clutter rate must be >= 0"));
        }
        if self.duration_frames == 0 {
            return Err(Error::invalid("a scenario needs at least one frame"));
        }
        if self.n_d == 0 {
            return Err(Error::invalid("n_d must be at least 1"));
        }
        let n = &self.noise;
        let sigmas =
            n.pose_sigma
                .iter()
                .chain(&n.jitter_sigma)
                .chain([&n.size_sigma, &n.doppler_sigma, &n.difficulty_sigma]);
        if sigmas.into_iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid("noise sigmas must be finite and >= 0"));
        }
        let r = self.clutter_region;
        if !(r[0] < r[1] && r[2] < r[3]) {
            return Err(Error::invalid("clutter region must have positive extent"));
        }
        let mut ids: Vec<u64> = self.objects.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.objects.len() {
            return Err(Error::invalid("object ids must be unique"));
        }
        for o in &self.objects {
            if o.size.iter().any(|s| !(*s > 0.0)) || !(o.speed >= 0.0) {
                return Err(Error::invalid(format!("object {} has invalid size or speed", o.id)));
            }
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.frame_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub id: u64,
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub velocity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFrame {
    pub frame: usize,
    pub timestamp: f64,
    pub objects: Vec<GroundTruthObject>,
}

#[derive(Debug, Clone, Copy)]
struct Mover {
    x: f64,
    y: f64,
    z: f64,
    heading: f64,
    speed: f64,
}

#[derive(Debug, Clone, Copy)]
enum StopPhase {
    Braking,
    Holding(usize),
    Accelerating,
}

impl Mover {
    fn advance_straight(&mut self, dist: f64) {
        self.x += dist * self.heading.cos();
        self.y += dist * self.heading.sin();
    }

    fn turn(&mut self, yaw_rate: f64, dt: f64) {
        if yaw_rate.abs() < 1e-12 {
            self.advance_straight(self.speed * dt);
            return;
        }
        let r = self.speed / yaw_rate;
        let h1 = self.heading + yaw_rate * dt;
        self.x += r * (h1.sin() - self.heading.sin());
        self.y -= r * (h1.cos() - self.heading.cos());
        self.heading = wrap_angle(h1);
    }
}

/// Integrates one object's schedule; returns one `(pose, velocity)` per frame.
fn integrate(obj: &ObjectSpec, frames: usize, dt: f64) -> Vec<(Pose, [f64; 3])> {
    let mut m = Mover {
        x: obj.start.x,
        y: obj.start.y,
        z: obj.start.z,
        heading: wrap_angle(obj.start.yaw),
        speed: obj.speed,
    };
    let mut schedule: Vec<Maneuver> = obj
        .segments
        .iter()
        .flat_map(|s| std::iter::repeat(s.maneuver).take(s.frames))
        .collect();
    schedule.reverse();
    let mut stop_phase: Option<StopPhase> = None;
    let mut out = Vec::with_capacity(frames);
    for k in 0..frames {
        let vel = [m.speed * m.heading.cos(), m.speed * m.heading.sin(), 0.0];
        out.push((Pose::new(m.x, m.y, m.z, m.heading), vel));
        if k + 1 == frames {
            break;
        }
        match schedule.pop().unwrap_or(Maneuver::ConstantVelocity) {
            Maneuver::ConstantVelocity => {
                stop_phase = None;
                m.advance_straight(m.speed * dt);
            }
            Maneuver::ConstantTurn { yaw_rate } => {
                stop_phase = None;
                m.turn(yaw_rate, dt);
            }
            Maneuver::StopGo {
                decel,
                hold_frames,
                accel,
                resume_speed,
            } => {
                let phase = stop_phase.unwrap_or(StopPhase::Braking);
                let v0 = m.speed;
                let (v1, next) = match phase {
                    StopPhase::Braking => {
                        let v1 = (v0 - decel.abs() * dt).max(0.0);
                        (
                            v1,
                            if v1 == 0.0 {
                                StopPhase::Holding(0)
                            } else {
                                StopPhase::Braking
                            },
                        )
                    }
                    StopPhase::Holding(n) if n < hold_frames => (0.0, StopPhase::Holding(n + 1)),
                    StopPhase::Holding(_) | StopPhase::Accelerating => {
                        ((v0 + accel.abs() * dt).min(resume_speed), StopPhase::Accelerating)
                    }
                };
                m.advance_straight(0.5 * (v0 + v1) * dt);
                m.speed = v1;
                stop_phase = Some(next);
            }
        }
    }
    out
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma.max(0.0)).expect("finite sigma")
}

fn truth_frames(spec: &ScenarioSpec) -> Vec<GroundTruthFrame> {
    let dt = spec.dt();
    let tracks: Vec<Vec<(Pose, [f64; 3])>> = spec
        .objects
        .iter()
        .map(|o| integrate(o, spec.duration_frames, dt))
        .collect();
    (0..spec.duration_frames)
        .map(|k| GroundTruthFrame {
            frame: k,
            timestamp: k as f64 * dt,
            objects: spec
                .objects
                .iter()
                .zip(&tracks)
                .map(|(o, traj)| {
                    let (p, v) = traj[k];
                    GroundTruthObject {
                        id: o.id,
                        bbox: Box3D {
                            x: p.x,
                            y: p.y,
                            z: p.z,
                            l: o.size[0],
                            w: o.size[1],
                            h: o.size[2],
                            yaw: p.yaw,
                        },
                        velocity: v,
                    }
                })
                .collect(),
        })
        .collect()
}

fn perturbed_box(b: &Box3D, offset: [f64; 4], size_noise: [f64; 3]) -> Box3D {
    Box3D {
        x: b.x + offset[0],
        y: b.y + offset[1],
        z: b.z + offset[2],
        l: (b.l + size_noise[0]).max(0.1 * b.l),
        w: (b.w + size_noise[1]).max(0.1 * b.w),
        h: (b.h + size_noise[2]).max(0.1 * b.h),
        yaw: wrap_angle(b.yaw + offset[3]),
    }
}

fn sample_frame(spec: &ScenarioSpec, gt: &GroundTruthFrame, r: &mut ChaCha8Rng) -> Result<SampleSet> {
    let n = &spec.noise;
    let size_n = normal(n.size_sigma);
    let doppler_n = normal(n.doppler_sigma);
    let difficulty = normal(n.difficulty_sigma);
    let mut passes: Vec<Vec<Detection>> = vec![Vec::new(); spec.n_d];

    for obj in &gt.objects {
        let u = difficulty.sample(r).exp();
        let shared: [f64; 4] = std::array::from_fn(|i| normal(n.pose_sigma[i] * u).sample(r));
        let size_err: [f64; 3] = std::array::from_fn(|_| size_n.sample(r));
        let truth = KinematicState::from_pose(obj.bbox.pose(), obj.velocity);
        let radial = radial_velocity(&truth, spec.sensor_origin).unwrap_or(0.0);
        let base_conf: f64 = r.gen_range(0.7..0.95);
        let visible = r.gen::<f64>() < spec.frame_detection_prob;
        for pass in passes.iter_mut() {
            let jitter: [f64; 4] = std::array::from_fn(|i| normal(n.jitter_sigma[i] * u).sample(r));
            let doppler = radial + doppler_n.sample(r);
            let conf = (base_conf + r.gen_range(-0.05..0.05)).clamp(0.0, 1.0);
            let detected = r.gen::<f64>() < spec.detection_prob && visible;
            if detected {
                let offset = std::array::from_fn(|i| shared[i] + jitter[i]);
                pass.push(Detection::new(
                    perturbed_box(&obj.bbox, offset, size_err),
                    doppler,
                    conf,
                ));
            }
        }
    }

    let count = if spec.clutter_rate > 0.0 {
        Poisson::new(spec.clutter_rate).expect("positive rate").sample(r) as usize
    } else {
        0
    };
    let reg = spec.clutter_region;
    for _ in 0..count {
        let ghost = Box3D {
            x: r.gen_range(reg[0]..reg[1]),
            y: r.gen_range(reg[2]..reg[3]),
            z: r.gen_range(0.0..1.5),
            l: r.gen_range(2.0..5.0),
            w: r.gen_range(1.0..2.5),
            h: r.gen_range(1.0..2.0),
            yaw: r.gen_range(-PI..PI),
        };
        let doppler = r.gen_range(-30.0..30.0);
        let conf = r.gen_range(0.2..0.6);
        for pass in passes.iter_mut() {
            let jitter: [f64; 4] = [
                normal(1.0).sample(r),
                normal(1.0).sample(r),
                normal(0.2).sample(r),
                normal(0.3).sample(r),
            ];
            if r.gen::<f64>() < spec.clutter_pass_prob {
                pass.push(Detection::new(
                    perturbed_box(&ghost, jitter, [0.0; 3]),
                    doppler + normal(1.0).sample(r),
                    conf,
                ));
            }
        }
    }
    SampleSet::new(gt.frame, gt.timestamp, passes)
}

/// Ground truth plus one sample set per frame; fully determined by the spec.
pub fn generate(spec: &ScenarioSpec) -> Result<(Vec<GroundTruthFrame>, Vec<SampleSet>)> {
    spec.validate()?;
    let gt = truth_frames(spec);
    let mut r = rng(mix_seed(spec.seed, 0xdec0));
    let samples = gt
        .iter()
        .map(|f| sample_frame(spec, f, &mut r))
        .collect::<Result<Vec<_>>>()?;
    Ok((gt, samples))
}

pub const PRESETS: [&str; 4] = ["crossing_doppler", "regime_switch", "dense_parallel", "stopgo"];

const CAR: [f64; 3] = [4.5, 1.9, 1.6];

/// Named scenario families.
///
/// * `crossing_doppler`: two cars whose paths cross at (40, 0) at t = 3 s with
///   radial velocities +10 and -10 m/s there, heavier-tailed position noise.
/// * `regime_switch`: six cars alternating 30-frame constant-velocity and
///   constant-turn segments.
/// * `dense_parallel`: ten cars in adjacent lanes 4 m apart at nearly equal
///   speeds.
/// * `stopgo`: four cars cycling between cruising and stop-and-go.
pub fn preset(name: &str, seed: u64) -> Result<ScenarioSpec> {
    let mut r = rng(mix_seed(seed, 0x9e5e7));
    let base = ScenarioSpec {
        name: name.to_string(),
        seed,
        ..Default::default()
    };
    let spec = match name {
        "crossing_doppler" => {
            let (cx, cy, t_cross, lateral): (f64, f64, f64, f64) = (40.0, 0.0, 3.0, 6.0);
            let make = |id: u64, vx: f64| {
                let heading = lateral.atan2(vx);
                ObjectSpec {
                    id,
                    start: Pose::new(cx - vx * t_cross, cy - lateral * t_cross, 0.8, heading),
                    speed: vx.hypot(lateral),
                    size: CAR,
                    segments: Vec::new(),
                }
            };
            ScenarioSpec {
                duration_frames: 60,
                objects: vec![make(0, 10.0), make(1, -10.0)],
                sensor_origin: [0.0, 0.0, 0.8],
                noise: NoiseModel {
                    pose_sigma: [0.3, 0.3, 0.1, 0.03],
                    difficulty_sigma: 0.8,
                    ..Default::default()
                },
                ..base
            }
        }
        "regime_switch" => {
            let objects = (0..6)
                .map(|i| {
                    let row = (i / 3) as f64;
                    let col = (i % 3) as f64;
                    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                    let segments = (0..8)
                        .map(|s| Segment {
                            frames: 30,
                            maneuver: if s % 2 == 0 {
                                Maneuver::ConstantVelocity
                            } else {
                                Maneuver::ConstantTurn {
                                    yaw_rate: sign * r.gen_range(0.15..0.35) * if s % 4 == 1 { 1.0 } else { -1.0 },
                                }
                            },
                        })
                        .collect();
                    ObjectSpec {
                        id: i as u64,
                        start: Pose::new(20.0 + 35.0 * col, -40.0 + 80.0 * row, 0.8, r.gen_range(-PI..PI)),
                        speed: r.gen_range(6.0..14.0),
                        size: CAR,
                        segments,
                    }
                })
                .collect();
            ScenarioSpec {
                duration_frames: 240,
                objects,
                clutter_region: [-50.0, 150.0, -120.0, 120.0],
                clutter_rate: 3.0,
                frame_detection_prob: 0.8,
                ..base
            }
        }
        "dense_parallel" => {
            let speed = 12.0;
            let objects = (0..10)
                .map(|i| ObjectSpec {
                    id: i as u64,
                    start: Pose::new(10.0 + r.gen_range(0.0..6.0), -18.0 + 4.0 * i as f64, 0.8, 0.0),
                    speed: speed + r.gen_range(-0.5..0.5),
                    size: CAR,
                    segments: Vec::new(),
                })
                .collect();
            ScenarioSpec {
                duration_frames: 80,
                objects,
                ..base
            }
        }
        "stopgo" => {
            let objects = (0..4)
                .map(|i| {
                    let cruise = r.gen_range(8.0..12.0);
                    ObjectSpec {
                        id: i as u64,
                        start: Pose::new(10.0, -15.0 + 10.0 * i as f64, 0.8, r.gen_range(-0.2..0.2)),
                        speed: cruise,
                        size: CAR,
                        segments: vec![
                            Segment {
                                frames: 20 + 5 * i,
                                maneuver: Maneuver::ConstantVelocity,
                            },
                            Segment {
                                frames: 60,
                                maneuver: Maneuver::StopGo {
                                    decel: r.gen_range(3.0..6.0),
                                    hold_frames: 10,
                                    accel: r.gen_range(2.0..3.5),
                                    resume_speed: cruise,
                                },
                            },
                        ],
                    }
                })
                .collect();
            ScenarioSpec {
                duration_frames: 120,
                objects,
                clutter_region: [5.0, 150.0, -40.0, 40.0],
                ..base
            }
        }
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    Ok(spec)
}

/// Sliding windows of `horizon` consecutive poses paired with the next pose,
/// per ground-truth object.
pub fn export_training_set(gt: &[GroundTruthFrame], horizon: usize) -> Result<Vec<TrainingSample>> {
    if horizon < 2 {
        return Err(Error::invalid("training horizon must be at least 2"));
    }
    let mut per_object: BTreeMap<u64, Vec<(usize, f64, Pose)>> = BTreeMap::new();
    for f in gt {
        for o in &f.objects {
            per_object
                .entry(o.id)
                .or_default()
                .push((f.frame, f.timestamp, o.bbox.pose()));
        }
    }
    let mut out = Vec::new();
    for traj in per_object.values() {
        // Split at frame gaps so windows only cover consecutive frames.
        let mut start = 0;
        for end in 1..=traj.len() {
            if end == traj.len() || traj[end].0 != traj[end - 1].0 + 1 {
                let run = &traj[start..end];
                if run.len() > horizon {
                    for w in run.windows(horizon + 1) {
                        out.push(TrainingSample {
                            history: History::from_poses(horizon, w[..horizon].iter().map(|&(_, t, p)| (t, p)))?,
                            target: w[horizon].2,
                        });
                    }
                }
                start = end;
            }
        }
    }
    Ok(out)
}
