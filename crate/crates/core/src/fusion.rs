//! Fusion of Monte-Carlo detector passes into single detections with
//! per-parameter spread, plus the loss-attenuation objective shared with the
//! motion predictor's training loop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bev_iou, wrap_angle, Box3D, Detection};

/// Detector output for one frame: one detection list per stochastic pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub frame: usize,
    pub timestamp: f64,
    pub passes: Vec<Vec<Detection>>,
}

impl SampleSet {
    pub fn new(frame: usize, timestamp: f64, passes: Vec<Vec<Detection>>) -> Result<Self> {
        if passes.is_empty() {
            return Err(Error::invalid("sample set needs at least one pass"));
        }
        Ok(SampleSet {
            frame,
            timestamp,
            passes,
        })
    }

    pub fn n_d(&self) -> usize {
        self.passes.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// `(pass index, detection)` pairs, at most one per pass.
    pub members: Vec<(usize, Detection)>,
    pub fused: Detection,
}

impl Cluster {
    pub fn support(&self) -> usize {
        let mut passes: Vec<usize> = self.members.iter().map(|(p, _)| *p).collect();
        passes.sort_unstable();
        passes.dedup();
        passes.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub tau_iou: f64,
    /// Drop clusters seen by fewer than this fraction of passes.
    pub min_support: Option<f64>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            tau_iou: 0.3,
            min_support: Some(0.3),
        }
    }
}

struct Building {
    members: Vec<(usize, Detection)>,
    mean: Box3D,
}

/// Greedy IoU agglomeration of the per-pass boxes.
///
/// Passes are visited in order. Each box joins the cluster whose running-mean
/// box it overlaps best (IoU >= `tau_iou`); a cluster accepts at most one box
/// per pass, contested slots go to the highest IoU and the losers seed new
/// clusters.
pub fn cluster_samples(set: &SampleSet, tau_iou: f64) -> Vec<Cluster> {
    let n_d = set.n_d();
    let mut clusters: Vec<Building> = Vec::new();

    for (pass, dets) in set.passes.iter().enumerate() {
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (di, det) in dets.iter().enumerate() {
            for (ci, c) in clusters.iter().enumerate() {
                let iou = bev_iou(&det.bbox, &c.mean);
                if iou >= tau_iou && iou > 0.0 {
                    candidates.push((iou, di, ci));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut det_taken = vec![false; dets.len()];
        let mut cluster_taken = vec![false; clusters.len()];
        let mut joins: Vec<(usize, usize)> = Vec::new();
        for (_, di, ci) in candidates {
            if !det_taken[di] && !cluster_taken[ci] {
                det_taken[di] = true;
                cluster_taken[ci] = true;
                joins.push((di, ci));
            }
        }
        for (di, ci) in joins {
            let c = &mut clusters[ci];
            c.members.push((pass, dets[di]));
            c.mean = mean_box(c.members.iter().map(|(_, d)| &d.bbox));
        }
        for (di, det) in dets.iter().enumerate() {
            if !det_taken[di] {
                clusters.push(Building {
                    members: vec![(pass, *det)],
                    mean: det.bbox,
                });
            }
        }
    }

    clusters
        .into_iter()
        .map(|b| {
            let fused = fuse_members(&b.members, n_d);
            Cluster {
                members: b.members,
                fused,
            }
        })
        .collect()
}

/// Clusters the passes and returns the fused detections, dropping
/// low-support clusters when configured.
pub fn fuse_frame(set: &SampleSet, cfg: &FusionConfig) -> Vec<Detection> {
    let n_d = set.n_d();
    cluster_samples(set, cfg.tau_iou)
        .into_iter()
        .filter(|c| match cfg.min_support {
            Some(frac) => (c.support() as f64) >= frac * n_d as f64,
            None => true,
        })
        .map(|c| c.fused)
        .collect()
}

/// Mean member confidence scaled by the fraction of passes that saw the cluster.
pub fn fuse_confidence(cluster: &Cluster, n_d: usize) -> f64 {
    confidence_of(&cluster.members, n_d)
}

fn confidence_of(members: &[(usize, Detection)], n_d: usize) -> f64 {
    if members.is_empty() || n_d == 0 {
        return 0.0;
    }
    let mean = members.iter().map(|(_, d)| d.confidence).sum::<f64>() / members.len() as f64;
    let mut passes: Vec<usize> = members.iter().map(|(p, _)| *p).collect();
    passes.sort_unstable();
    passes.dedup();
    (mean * passes.len() as f64 / n_d as f64).clamp(0.0, 1.0)
}

fn circular_mean(angles: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for a in angles {
        s += a.sin();
        c += a.cos();
    }
    wrap_angle(s.atan2(c))
}

/// Arithmetic mean of the box parameters with a circular mean for yaw.
/// Accumulates offsets from the first box so identical inputs reproduce it
/// exactly.
///
/// # Panics
/// If `boxes` is empty.
pub fn mean_box<'a>(boxes: impl Iterator<Item = &'a Box3D> + Clone) -> Box3D {
    let mut it = boxes.clone();
    let first = it.next().expect("mean_box needs at least one box");
    let p0 = first.params();
    let n = boxes.clone().count() as f64;
    let mut acc = [0.0; 6];
    for b in it {
        let p = b.params();
        for k in 0..6 {
            acc[k] += p[k] - p0[k];
        }
    }
    let yaw_offset = circular_mean(boxes.map(|b| wrap_angle(b.yaw - p0[6])));
    Box3D {
        x: p0[0] + acc[0] / n,
        y: p0[1] + acc[1] / n,
        z: p0[2] + acc[2] / n,
        l: p0[3] + acc[3] / n,
        w: p0[4] + acc[4] / n,
        h: p0[5] + acc[5] / n,
        yaw: wrap_angle(p0[6] + yaw_offset),
    }
}

fn fuse_members(members: &[(usize, Detection)], n_d: usize) -> Detection {
    let boxes = members.iter().map(|(_, d)| &d.bbox);
    let mean = mean_box(boxes.clone());
    let n = members.len() as f64;
    let mp = mean.params();
    let mut var = [0.0; 7];
    for b in boxes {
        let p = b.params();
        for k in 0..6 {
            var[k] += (p[k] - mp[k]).powi(2);
        }
        var[6] += wrap_angle(p[6] - mp[6]).powi(2);
    }
    let box_std = var.map(|v| (v / n).sqrt());
    let doppler = members.iter().map(|(_, d)| d.doppler).sum::<f64>() / n;
    Detection {
        bbox: mean,
        doppler,
        confidence: confidence_of(members, n_d),
        box_std,
    }
}

fn check_lengths(residuals: &[f64], log_vars: &[f64]) -> Result<()> {
    if residuals.is_empty() {
        return Err(Error::invalid("attenuated loss needs at least one residual"));
    }
    if residuals.len() != log_vars.len() {
        return Err(Error::invalid(format!(
            "{} residuals but {} log-variances",
            residuals.len(),
            log_vars.len()
        )));
    }
    Ok(())
}

/// Heteroscedastic regression loss
/// `(1/N) sum_i [ r_i^2 / (2 s_i^2) + log(s_i^2) / 2 ]` with `log_vars[i] = log s_i^2`.
pub fn attenuated_loss(residuals: &[f64], log_vars: &[f64]) -> Result<f64> {
    check_lengths(residuals, log_vars)?;
    let n = residuals.len() as f64;
    let sum: f64 = residuals
        .iter()
        .zip(log_vars)
        .map(|(r, lv)| 0.5 * r * r * (-lv).exp() + 0.5 * lv)
        .sum();
    Ok(sum / n)
}

/// Analytic partial derivatives of [`attenuated_loss`] with respect to the
/// residuals and the log-variances.
pub fn attenuated_loss_grad(residuals: &[f64], log_vars: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_lengths(residuals, log_vars)?;
    let n = residuals.len() as f64;
    let mut d_r = Vec::with_capacity(residuals.len());
    let mut d_lv = Vec::with_capacity(residuals.len());
    for (r, lv) in residuals.iter().zip(log_vars) {
        let inv_var = (-lv).exp();
        d_r.push(r * inv_var / n);
        d_lv.push((0.5 - 0.5 * r * r * inv_var) / n);
    }
    Ok((d_r, d_lv))
}
