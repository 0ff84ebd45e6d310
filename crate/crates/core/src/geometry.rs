//! Shared geometric and kinematic value types plus the exact geometry kernels
//! (rotated bird's-eye-view IoU, radial-velocity projection, yaw wrapping).

use std::f64::consts::PI;

use nalgebra::{SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector7 = SVector<f64, 7>;
pub type Matrix7 = SMatrix<f64, 7, 7>;

/// Wraps an angle into `(-pi, pi]`.
///
/// Values already inside the interval are returned untouched, which makes the
/// function exactly idempotent.
pub fn yaw_normalize(theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::invalid(format!("non-finite angle {theta}")));
    }
    Ok(wrap_angle(theta))
}

/// Infallible variant of [`yaw_normalize`] for internal use on values known to
/// be finite. Non-finite input is passed through unchanged.
pub(crate) fn wrap_angle(theta: f64) -> f64 {
    if !theta.is_finite() || (theta > -PI && theta <= PI) {
        return theta;
    }
    let r = theta.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Oriented 3D bounding box: center, extents and heading about the z axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

impl Box3D {
    pub fn new(x: f64, y: f64, z: f64, l: f64, w: f64, h: f64, yaw: f64) -> Result<Self> {
        let b = Box3D {
            x,
            y,
            z,
            l,
            w,
            h,
            yaw: yaw_normalize(yaw)?,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let params = self.params();
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("box has non-finite parameter"));
        }
        if !(self.l > 0.0 && self.w > 0.0 && self.h > 0.0) {
            return Err(Error::invalid(format!(
                "box extents must be positive, got l={} w={} h={}",
                self.l, self.w, self.h
            )));
        }
        if !(self.yaw > -PI && self.yaw <= PI) {
            return Err(Error::invalid(format!("box yaw {} not in (-pi, pi]", self.yaw)));
        }
        Ok(())
    }

    /// Parameters in the fixed order `[x, y, z, l, w, h, yaw]`.
    pub fn params(&self) -> [f64; 7] {
        [self.x, self.y, self.z, self.l, self.w, self.h, self.yaw]
    }

    pub fn pose(&self) -> Pose {
        Pose {
            x: self.x,
            y: self.y,
            z: self.z,
            yaw: self.yaw,
        }
    }

    pub fn area_bev(&self) -> f64 {
        self.l * self.w
    }

    /// Footprint corners in counter-clockwise order.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = 0.5 * self.l;
        let hw = 0.5 * self.w;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[u, v]| [self.x + c * u - s * v, self.y + s * u + c * v])
    }
}

/// Position and heading; the quantity the motion predictor forecasts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Pose { x, y, z, yaw }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.z, self.yaw]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Pose::new(a[0], a[1], a[2], a[3])
    }

    pub fn translated(self, dx: f64, dy: f64, dz: f64) -> Self {
        Pose::new(self.x + dx, self.y + dy, self.z + dz, self.yaw)
    }
}

/// Fused per-frame observation.
///
/// `doppler` is the signed radial velocity; negative values mean the target is
/// approaching the sensor. `box_std` follows the [`Box3D::params`] ordering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub doppler: f64,
    pub confidence: f64,
    pub box_std: [f64; 7],
}

impl Detection {
    pub fn new(bbox: Box3D, doppler: f64, confidence: f64) -> Self {
        Detection {
            bbox,
            doppler,
            confidence,
            box_std: [0.0; 7],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if !self.doppler.is_finite() {
            return Err(Error::invalid("non-finite doppler"));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::invalid(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        if self.box_std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::invalid("box_std entries must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Kalman state: `[x, y, z, yaw, vx, vy, vz]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KinematicState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
}

impl KinematicState {
    pub fn from_pose(pose: Pose, velocity: [f64; 3]) -> Self {
        KinematicState {
            x: pose.x,
            y: pose.y,
            z: pose.z,
            yaw: pose.yaw,
            vx: velocity[0],
            vy: velocity[1],
            vz: velocity[2],
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.z, self.yaw)
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.vx, self.vy, self.vz)
    }

    pub fn to_vector(&self) -> Vector7 {
        Vector7::from([self.x, self.y, self.z, self.yaw, self.vx, self.vy, self.vz])
    }

    pub fn from_vector(v: &Vector7) -> Self {
        KinematicState {
            x: v[0],
            y: v[1],
            z: v[2],
            yaw: wrap_angle(v[3]),
            vx: v[4],
            vy: v[5],
            vz: v[6],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Symmetric positive semi-definite 7x7 state covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Covariance7(pub Matrix7);

impl Covariance7 {
    pub fn from_diagonal(diag: &[f64; 7]) -> Self {
        Covariance7(Matrix7::from_diagonal(&Vector7::from(*diag)))
    }

    pub fn matrix(&self) -> &Matrix7 {
        &self.0
    }

    /// Replaces the matrix with `(P + P^T) / 2`.
    pub fn symmetrize(&mut self) {
        let m = self.0;
        self.0 = (m + m.transpose()) * 0.5;
    }

    pub fn is_symmetric(&self) -> bool {
        let m = &self.0;
        let scale = m.abs().max().max(f64::MIN_POSITIVE);
        (m - m.transpose()).abs().max() <= 1e-9 * scale
    }

    pub fn is_psd(&self) -> bool {
        let trace = self.0.trace();
        let eig = nalgebra::SymmetricEigen::new(self.0);
        eig.eigenvalues.iter().all(|&l| l >= -1e-9 * trace.abs())
    }
}

/// Projects the state's velocity onto the sensor-to-target line of sight.
///
/// Positive values mean the target is receding.
pub fn radial_velocity(state: &KinematicState, sensor_origin: [f64; 3]) -> Result<f64> {
    let los = state.position() - Vector3::from(sensor_origin);
    let range = los.norm();
    if !(range > 0.0) {
        return Err(Error::DegenerateGeometry(
            "target position coincides with sensor origin".into(),
        ));
    }
    Ok(state.velocity().dot(&los) / range)
}

/// Intersection-over-union of the two boxes' footprints in the x-y plane.
pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    let area_a = a.area_bev();
    let area_b = b.area_bev();
    if !(area_a > 0.0 && area_b > 0.0) {
        return 0.0;
    }
    // Cheap rejection on circumscribed circles.
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let ra = 0.5 * a.l.hypot(a.w);
    let rb = 0.5 * b.l.hypot(b.w);
    if dx * dx + dy * dy > (ra + rb) * (ra + rb) {
        return 0.0;
    }
    let inter = polygon_area(&clip_convex(&a.bev_corners(), &b.bev_corners()));
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Sutherland-Hodgman clipping of `subject` by the convex counter-clockwise
/// polygon `clip`.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let e0 = clip[i];
        let e1 = clip[(i + 1) % clip.len()];
        let side = |p: [f64; 2]| (e1[0] - e0[0]) * (p[1] - e0[1]) - (e1[1] - e0[1]) * (p[0] - e0[0]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let s_cur = side(cur);
            let s_prev = side(prev);
            if s_cur >= 0.0 {
                if s_prev < 0.0 {
                    output.push(intersect(prev, cur, s_prev, s_cur));
                }
                output.push(cur);
            } else if s_prev >= 0.0 {
                output.push(intersect(prev, cur, s_prev, s_cur));
            }
        }
    }
    output
}

fn intersect(p: [f64; 2], q: [f64; 2], sp: f64, sq: f64) -> [f64; 2] {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * acc.abs()
}
