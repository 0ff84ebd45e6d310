//! Two-stage data association.
//!
//! Stage 1 runs an optimal assignment over Mahalanobis distances in the
//! `[x, y, z, yaw]` measurement space and keeps pairs inside `gate1`. Stage 2
//! takes the leftovers on both sides and re-matches them with
//! `w1 * D_M + w2 * (1 - A_R)`, where `A_R` is a Gaussian affinity between the
//! detection's Doppler and the track's predicted radial velocity.

mod hungarian;

use nalgebra::{DMatrix, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

pub use hungarian::{assignment_cost, hungarian};

use crate::error::{Error, Result};
use crate::geometry::{radial_velocity, wrap_angle, Covariance7, Detection, KinematicState, Pose};

/// Chi-square 99% quantile with 4 degrees of freedom, as a distance.
pub const DEFAULT_GATE1: f64 = 3.644_173_431_138_609_6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssociationMode {
    MahalanobisOnly,
    TwoStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssociationConfig {
    pub w1: f64,
    pub w2: f64,
    /// Bandwidth of the velocity affinity kernel, m/s.
    pub sigma_v: f64,
    pub gate1: f64,
    pub gate2: f64,
    pub mode: AssociationMode,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        let (w1, w2) = (1.0, 2.0);
        AssociationConfig {
            w1,
            w2,
            sigma_v: 2.0,
            gate1: DEFAULT_GATE1,
            gate2: DEFAULT_GATE1 * w1 + w2 * 0.5,
            mode: AssociationMode::TwoStage,
        }
    }
}

impl AssociationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w1 >= 0.0 && self.w2 >= 0.0) || (self.w1 == 0.0 && self.w2 == 0.0) {
            return Err(Error::invalid("association weights must be >= 0 and not both zero"));
        }
        if !(self.sigma_v > 0.0) {
            return Err(Error::invalid("sigma_v must be positive"));
        }
        if !(self.gate1 > 0.0 && self.gate2 > 0.0) {
            return Err(Error::invalid("association gates must be positive"));
        }
        Ok(())
    }
}

/// A priori view of one track, as needed for matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPrediction {
    pub id: u64,
    pub state: KinematicState,
    pub cov: Covariance7,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub track_id: u64,
    pub detection: usize,
    pub cost: f64,
    pub stage: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssociationResult {
    pub matches: Vec<Match>,
    pub unmatched_tracks: Vec<u64>,
    pub unmatched_detections: Vec<usize>,
}

impl AssociationResult {
    pub fn stage2_matches(&self) -> usize {
        self.matches.iter().filter(|m| m.stage == 2).count()
    }
}

/// Measurement vector `[x, y, z, yaw]` of a detection.
pub fn measurement(det: &Detection) -> Vector4<f64> {
    Vector4::new(det.bbox.x, det.bbox.y, det.bbox.z, det.bbox.yaw)
}

/// `H P H^T + R` for the pose-selecting measurement matrix `H`.
pub fn innovation_covariance(cov: &Covariance7, r: &Matrix4<f64>) -> Matrix4<f64> {
    cov.matrix().fixed_view::<4, 4>(0, 0).into_owned() + r
}

/// `sqrt(d^T S^-1 d)` with `d = z - z_hat` and the yaw residual wrapped.
pub fn mahalanobis(detection: &Detection, predicted: &Pose, s: &Matrix4<f64>) -> Result<f64> {
    let z = measurement(detection);
    let mut d = z - Vector4::new(predicted.x, predicted.y, predicted.z, predicted.yaw);
    d[3] = wrap_angle(d[3]);
    let sym = (s + s.transpose()) * 0.5;
    let chol = sym
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("innovation covariance".into()))?;
    let solved = chol.solve(&d);
    Ok(d.dot(&solved).max(0.0).sqrt())
}

/// `exp(-(doppler - radial)^2 / (2 sigma_v^2))`.
pub fn velocity_affinity(detection_doppler: f64, track_radial: f64, sigma_v: f64) -> f64 {
    let dv = detection_doppler - track_radial;
    (-dv * dv / (2.0 * sigma_v * sigma_v)).exp()
}

/// `w1 * d_m + w2 * (1 - a_r)`.
pub fn combined_cost(d_m: f64, a_r: f64, cfg: &AssociationConfig) -> f64 {
    cfg.w1 * d_m + cfg.w2 * (1.0 - a_r)
}

fn gated_assignment(cost: &DMatrix<Option<f64>>, gate: f64) -> Vec<(usize, usize, f64)> {
    let sentinel = 1e6 * (1.0 + gate);
    let dense = cost.map(|c| match c {
        Some(v) if v <= gate => v,
        _ => sentinel,
    });
    hungarian(&dense)
        .into_iter()
        .filter_map(|(r, c)| match cost[(r, c)] {
            Some(v) if v <= gate => Some((r, c, v)),
            _ => None,
        })
        .collect()
}

/// Matches detections to predicted tracks.
///
/// `measurement_noise[j]` is the `R` used for detection `j`. Pairs whose
/// innovation covariance is not positive definite, or whose geometry makes
/// the radial velocity undefined, are treated as gated out.
pub fn associate(
    tracks: &[TrackPrediction],
    detections: &[Detection],
    measurement_noise: &[Matrix4<f64>],
    sensor_origin: [f64; 3],
    cfg: &AssociationConfig,
) -> Result<AssociationResult> {
    cfg.validate()?;
    if measurement_noise.len() != detections.len() {
        return Err(Error::invalid("need one measurement-noise matrix per detection"));
    }
    let (nt, nd) = (tracks.len(), detections.len());
    let d_m = DMatrix::from_fn(nt, nd, |i, j| {
        let s = innovation_covariance(&tracks[i].cov, &measurement_noise[j]);
        mahalanobis(&detections[j], &tracks[i].state.pose(), &s).ok()
    });

    let mut track_used = vec![false; nt];
    let mut det_used = vec![false; nd];
    let mut matches = Vec::new();
    for (i, j, cost) in gated_assignment(&d_m, cfg.gate1) {
        track_used[i] = true;
        det_used[j] = true;
        matches.push(Match {
            track_id: tracks[i].id,
            detection: j,
            cost,
            stage: 1,
        });
    }

    if cfg.mode == AssociationMode::TwoStage {
        let left_t: Vec<usize> = (0..nt).filter(|&i| !track_used[i]).collect();
        let left_d: Vec<usize> = (0..nd).filter(|&j| !det_used[j]).collect();
        if !left_t.is_empty() && !left_d.is_empty() {
            let cost = DMatrix::from_fn(left_t.len(), left_d.len(), |a, b| {
                let (i, j) = (left_t[a], left_d[b]);
                let dm = d_m[(i, j)]?;
                let radial = radial_velocity(&tracks[i].state, sensor_origin).ok()?;
                let ar = velocity_affinity(detections[j].doppler, radial, cfg.sigma_v);
                Some(combined_cost(dm, ar, cfg))
            });
            for (a, b, c) in gated_assignment(&cost, cfg.gate2) {
                let (i, j) = (left_t[a], left_d[b]);
                track_used[i] = true;
                det_used[j] = true;
                matches.push(Match {
                    track_id: tracks[i].id,
                    detection: j,
                    cost: c,
                    stage: 2,
                });
            }
        }
    }

    Ok(AssociationResult {
        matches,
        unmatched_tracks: (0..nt).filter(|&i| !track_used[i]).map(|i| tracks[i].id).collect(),
        unmatched_detections: (0..nd).filter(|&j| !det_used[j]).collect(),
    })
}
