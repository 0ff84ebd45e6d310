//! Recall-swept 3D-MOT metrics: TP/FP/FN/IDS bookkeeping, AMOTA and AMOTP.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::GroundTruthFrame;
use crate::tracking::FrameResult;

pub const DEFAULT_DIST_THRESHOLD: f64 = 2.0;
pub const DEFAULT_RECALL_POINTS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtPoint {
    pub id: u64,
    pub xy: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredPoint {
    pub id: u64,
    pub xy: [f64; 2],
    pub score: f64,
}

pub fn gt_points(frames: &[GroundTruthFrame]) -> Vec<Vec<GtPoint>> {
    frames
        .iter()
        .map(|f| {
            f.objects
                .iter()
                .map(|o| GtPoint {
                    id: o.id,
                    xy: [o.bbox.x, o.bbox.y],
                })
                .collect()
        })
        .collect()
}

pub fn pred_points(frames: &[FrameResult]) -> Vec<Vec<PredPoint>> {
    frames
        .iter()
        .map(|f| {
            f.tracks
                .iter()
                .map(|t| PredPoint {
                    id: t.id,
                    xy: [t.bbox.x, t.bbox.y],
                    score: t.score,
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ids: usize,
    /// Sum of matched center distances.
    pub dist_sum: f64,
}

impl Tally {
    pub fn add(&mut self, o: &Tally) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.ids += o.ids;
        self.dist_sum += o.dist_sum;
    }
}

/// Last track id each ground-truth object was matched to.
pub type IdentityBook = HashMap<u64, u64>;

/// Greedy one-to-one matching by ascending BEV center distance.
pub fn match_frame(preds: &[PredPoint], gt: &[GtPoint], dist_threshold: f64, book: &mut IdentityBook) -> Tally {
    let mut pairs = Vec::new();
    for (pi, p) in preds.iter().enumerate() {
        for (gi, g) in gt.iter().enumerate() {
            let d = (p.xy[0] - g.xy[0]).hypot(p.xy[1] - g.xy[1]);
            if d <= dist_threshold {
                pairs.push((d, p.id, g.id, pi, gi));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; preds.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut t = Tally::default();
    for (d, pid, gid, pi, gi) in pairs {
        if pred_used[pi] || gt_used[gi] {
            continue;
        }
        pred_used[pi] = true;
        gt_used[gi] = true;
        t.tp += 1;
        t.dist_sum += d;
        if let Some(prev) = book.insert(gid, pid) {
            if prev != pid {
                t.ids += 1;
            }
        }
    }
    t.fp = preds.len() - t.tp;
    t.fn_ = gt.len() - t.tp;
    t
}

/// Whole-sequence tally keeping only predictions with `score >= threshold`.
pub fn sequence_tally(preds: &[Vec<PredPoint>], gt: &[Vec<GtPoint>], threshold: f64, dist_threshold: f64) -> Tally {
    let mut book = IdentityBook::new();
    let mut total = Tally::default();
    let empty = Vec::new();
    for k in 0..gt.len().max(preds.len()) {
        let g = gt.get(k).unwrap_or(&empty);
        let kept: Vec<PredPoint> = preds
            .get(k)
            .map(|p| p.iter().copied().filter(|p| p.score >= threshold).collect())
            .unwrap_or_default();
        total.add(&match_frame(&kept, g, dist_threshold, &mut book));
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub recall: f64,
    /// Score threshold used; `None` when no threshold reaches `recall`.
    pub threshold: Option<f64>,
    pub achieved_recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ids: usize,
    pub motar: f64,
    pub motp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub amota: f64,
    pub amotp: f64,
    pub gt_count: usize,
    pub rows: Vec<RecallRow>,
    /// Row with the highest MOTAR.
    pub best: RecallRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub dist_threshold: f64,
    pub recall_points: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            dist_threshold: DEFAULT_DIST_THRESHOLD,
            recall_points: DEFAULT_RECALL_POINTS,
        }
    }
}

pub fn motar(r: f64, ids: usize, fp: usize, fn_: usize, p: usize) -> f64 {
    let p = p as f64;
    let v = 1.0 - ((ids + fp + fn_) as f64 - (1.0 - r) * p) / (r * p);
    v.clamp(0.0, 1.0)
}

/// Sweeps every distinct track score as a threshold and aggregates MOTAR and
/// mean matched distance over an evenly spaced recall grid.
pub fn amota(preds: &[Vec<PredPoint>], gt: &[Vec<GtPoint>], cfg: &MetricsConfig) -> Result<MetricsReport> {
    if cfg.recall_points == 0 || !(cfg.dist_threshold > 0.0) {
        return Err(Error::invalid(
            "metrics need recall_points >= 1 and a positive distance",
        ));
    }
    let p: usize = gt.iter().map(Vec::len).sum();
    if p == 0 {
        return Err(Error::invalid("no ground-truth objects to evaluate against"));
    }
    let mut thresholds: Vec<f64> = preds.iter().flatten().map(|p| p.score).collect();
    if thresholds.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("track scores must be finite"));
    }
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let tallies: Vec<Tally> = thresholds
        .par_iter()
        .map(|&t| sequence_tally(preds, gt, t, cfg.dist_threshold))
        .collect();

    let l = cfg.recall_points;
    let rows: Vec<RecallRow> = (1..=l)
        .map(|i| {
            let r = i as f64 / l as f64;
            // Smallest achieved recall >= r; the higher threshold wins ties.
            let chosen = thresholds
                .iter()
                .zip(&tallies)
                .filter(|(_, t)| t.tp * l >= i * p)
                .min_by_key(|(_, t)| t.tp);
            match chosen {
                Some((&th, t)) => RecallRow {
                    recall: r,
                    threshold: Some(th),
                    achieved_recall: t.tp as f64 / p as f64,
                    tp: t.tp,
                    fp: t.fp,
                    fn_: t.fn_,
                    ids: t.ids,
                    motar: motar(r, t.ids, t.fp, t.fn_, p),
                    motp: t.dist_sum / t.tp as f64,
                },
                None => RecallRow {
                    recall: r,
                    threshold: None,
                    achieved_recall: 0.0,
                    tp: 0,
                    fp: 0,
                    fn_: p,
                    ids: 0,
                    motar: 0.0,
                    motp: cfg.dist_threshold,
                },
            }
        })
        .collect();
    let amota = rows.iter().map(|r| r.motar).sum::<f64>() / l as f64;
    let amotp = rows.iter().map(|r| r.motp).sum::<f64>() / l as f64;
    let best = *rows
        .iter()
        .rev()
        .max_by(|a, b| a.motar.total_cmp(&b.motar))
        .expect("grid is non-empty");
    Ok(MetricsReport {
        amota,
        amotp,
        gt_count: p,
        rows,
        best,
    })
}

/// Convenience wrapper over simulator ground truth and tracker output.
pub fn evaluate(tracks: &[FrameResult], gt: &[GroundTruthFrame], cfg: &MetricsConfig) -> Result<MetricsReport> {
    amota(&pred_points(tracks), &gt_points(gt), cfg)
}
