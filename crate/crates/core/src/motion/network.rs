//! Single-block attention predictor with a hand-written backward pass.
//!
//! Layout: per-token pose-delta embedding, one single-head self-attention
//! block with residual, one ReLU feed-forward block with residual, mean
//! pooling over tokens, and a linear head producing four pose deltas plus four
//! log-variances. Dropout sits after the attention output and after the
//! feed-forward hidden layer.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::History;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose};
use crate::rng::rng;

pub type Tensor = DMatrix<f64>;

/// Per-token input width: body-frame `dx, dy, dz, dyaw` and the time offset.
pub const FEATURES: usize = 5;
/// Head width: four pose deltas followed by four log-variances.
pub const OUTPUTS: usize = 8;

pub const FORMAT_VERSION: u32 = 1;

const TENSOR_NAMES: [&str; 12] = [
    "embed", "embed_b", "query", "key", "value", "attn_out", "ff1", "ff1_b", "ff2", "ff2_b", "head", "head_b",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub embed: Tensor,
    pub embed_b: Tensor,
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
    pub attn_out: Tensor,
    pub ff1: Tensor,
    pub ff1_b: Tensor,
    pub ff2: Tensor,
    pub ff2_b: Tensor,
    pub head: Tensor,
    pub head_b: Tensor,
}

pub type Gradients = Weights;

impl Weights {
    fn zeros(d: usize, h: usize) -> Self {
        Weights {
            embed: Tensor::zeros(FEATURES, d),
            embed_b: Tensor::zeros(1, d),
            query: Tensor::zeros(d, d),
            key: Tensor::zeros(d, d),
            value: Tensor::zeros(d, d),
            attn_out: Tensor::zeros(d, d),
            ff1: Tensor::zeros(d, h),
            ff1_b: Tensor::zeros(1, h),
            ff2: Tensor::zeros(h, d),
            ff2_b: Tensor::zeros(1, d),
            head: Tensor::zeros(d, OUTPUTS),
            head_b: Tensor::zeros(1, OUTPUTS),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Weights::zeros(self.embed.ncols(), self.ff1.ncols())
    }

    pub fn tensors(&self) -> [&Tensor; 12] {
        [
            &self.embed,
            &self.embed_b,
            &self.query,
            &self.key,
            &self.value,
            &self.attn_out,
            &self.ff1,
            &self.ff1_b,
            &self.ff2,
            &self.ff2_b,
            &self.head,
            &self.head_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.embed,
            &mut self.embed_b,
            &mut self.query,
            &mut self.key,
            &mut self.value,
            &mut self.attn_out,
            &mut self.ff1,
            &mut self.ff1_b,
            &mut self.ff2,
            &mut self.ff2_b,
            &mut self.head,
            &mut self.head_b,
        ]
    }

    pub fn norm_squared(&self) -> f64 {
        self.tensors().iter().map(|t| t.norm_squared()).sum()
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            *t *= k;
        }
    }

    pub fn add_scaled(&mut self, other: &Weights, k: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            *a += b * k;
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Fixed scales applied to the body-frame deltas before embedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub position: f64,
    pub yaw: f64,
    pub time: f64,
}

impl Default for InputScaling {
    fn default() -> Self {
        InputScaling {
            position: 1.0,
            yaw: 0.05,
            time: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub horizon: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout_rate: f64,
    pub scaling: InputScaling,
    pub weights: Weights,
}

/// Output of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawOutput {
    /// Network output in the normalized body frame of the last pose.
    pub raw: [f64; OUTPUTS],
    pub pose: Pose,
    pub log_var: [f64; 4],
}

/// Reference frame of the most recent pose.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Anchor {
    pose: Pose,
    cos: f64,
    sin: f64,
}

pub(crate) struct Cache {
    x: Tensor,
    e: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    a: Tensor,
    c: Tensor,
    mask1: Option<Tensor>,
    h1: Tensor,
    z: Tensor,
    mask2: Option<Tensor>,
    ud: Tensor,
    pooled: Tensor,
}

fn add_row(m: &mut Tensor, b: &Tensor) {
    for mut row in m.row_iter_mut() {
        row += b;
    }
}

fn sum_rows(m: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, m.ncols());
    for row in m.row_iter() {
        out += row;
    }
    out
}

fn dropout_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rate: f64) -> Tensor {
    let keep = 1.0 / (1.0 - rate);
    Tensor::from_fn(rows, cols, |_, _| if rng.gen::<f64>() < rate { 0.0 } else { keep })
}

impl PredictorModel {
    /// Xavier-uniform initialization from a seed; biases start at zero.
    pub fn init(horizon: usize, d_model: usize, d_ff: usize, dropout_rate: f64, seed: u64) -> Self {
        let mut rng = rng(seed);
        let mut weights = Weights::zeros(d_model, d_ff);
        for (name, t) in TENSOR_NAMES.iter().zip(weights.tensors_mut()) {
            if name.ends_with("_b") {
                continue;
            }
            let bound = (6.0 / (t.nrows() + t.ncols()) as f64).sqrt();
            for v in t.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
        PredictorModel {
            horizon,
            d_model,
            d_ff,
            dropout_rate,
            scaling: InputScaling::default(),
            weights,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("model horizon must be at least 1"));
        }
        if !self.weights.all_finite() {
            return Err(Error::invalid("model has non-finite weights"));
        }
        let w = &self.weights;
        let (d, h) = (self.d_model, self.d_ff);
        let shapes = [
            (FEATURES, d),
            (1, d),
            (d, d),
            (d, d),
            (d, d),
            (d, d),
            (d, h),
            (1, h),
            (h, d),
            (1, d),
            (d, OUTPUTS),
            (1, OUTPUTS),
        ];
        for ((t, shape), name) in w.tensors().iter().zip(shapes).zip(TENSOR_NAMES) {
            if t.shape() != shape {
                return Err(Error::invalid(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn anchor(history: &History) -> Result<Anchor> {
        let (_, pose) = history
            .last()
            .ok_or_else(|| Error::invalid("cannot predict from an empty history"))?;
        let (sin, cos) = pose.yaw.sin_cos();
        Ok(Anchor { pose, cos, sin })
    }

    /// Expresses `pose` relative to the anchor, rotated into its heading and
    /// scaled, as `[dx, dy, dz, dyaw]`.
    pub(crate) fn to_body(&self, anchor: &Anchor, pose: &Pose) -> [f64; 4] {
        let dx = pose.x - anchor.pose.x;
        let dy = pose.y - anchor.pose.y;
        let s = &self.scaling;
        [
            (anchor.cos * dx + anchor.sin * dy) / s.position,
            (-anchor.sin * dx + anchor.cos * dy) / s.position,
            (pose.z - anchor.pose.z) / s.position,
            wrap_angle(pose.yaw - anchor.pose.yaw) / s.yaw,
        ]
    }

    pub(crate) fn from_body(&self, anchor: &Anchor, delta: &[f64]) -> Pose {
        let s = &self.scaling;
        let bx = delta[0] * s.position;
        let by = delta[1] * s.position;
        Pose {
            x: anchor.pose.x + anchor.cos * bx - anchor.sin * by,
            y: anchor.pose.y + anchor.sin * bx + anchor.cos * by,
            z: anchor.pose.z + delta[2] * s.position,
            yaw: wrap_angle(anchor.pose.yaw + delta[3] * s.yaw),
        }
    }

    /// Token features, oldest first.
    ///
    /// Histories shorter than the horizon are conceptually front-padded with
    /// masked copies of the oldest state; since masked tokens neither attend
    /// nor get pooled, only the real tokens are materialized.
    pub(crate) fn features(&self, history: &History) -> Result<(Tensor, Anchor)> {
        let anchor = Self::anchor(history)?;
        let (t_last, _) = history.last().expect("non-empty");
        let skip = history.len().saturating_sub(self.horizon);
        let rows: Vec<[f64; FEATURES]> = history
            .iter()
            .skip(skip)
            .map(|(t, p)| {
                let b = self.to_body(&anchor, p);
                [b[0], b[1], b[2], b[3], (t - t_last) / self.scaling.time]
            })
            .collect();
        let x = Tensor::from_fn(rows.len(), FEATURES, |i, j| rows[i][j]);
        Ok((x, anchor))
    }

    pub(crate) fn draw_masks(&self, tokens: usize, seed: Option<u64>) -> Option<(Tensor, Tensor)> {
        let seed = seed?;
        if self.dropout_rate <= 0.0 {
            return None;
        }
        let mut r = rng(seed);
        let m1 = dropout_mask(&mut r, tokens, self.d_model, self.dropout_rate);
        let m2 = dropout_mask(&mut r, tokens, self.d_ff, self.dropout_rate);
        Some((m1, m2))
    }

    /// Raw network evaluation on a feature matrix with optional dropout masks.
    pub(crate) fn forward_features(&self, x: &Tensor, masks: Option<(Tensor, Tensor)>) -> ([f64; OUTPUTS], Cache) {
        let w = &self.weights;
        let tokens = x.nrows();
        let inv_sqrt_d = 1.0 / (self.d_model as f64).sqrt();

        let mut e = x * &w.embed;
        add_row(&mut e, &w.embed_b);
        let q = &e * &w.query;
        let k = &e * &w.key;
        let v = &e * &w.value;
        let mut a = (&q * k.transpose()) * inv_sqrt_d;
        for mut row in a.row_iter_mut() {
            let max = row.max();
            row.apply(|s| *s = (*s - max).exp());
            let total = row.sum();
            row /= total;
        }
        let c = &a * &v;
        let mut o = &c * &w.attn_out;
        let (mask1, mask2) = match masks {
            Some((m1, m2)) => (Some(m1), Some(m2)),
            None => (None, None),
        };
        if let Some(m) = &mask1 {
            o.component_mul_assign(m);
        }
        let h1 = &e + &o;
        let mut z = &h1 * &w.ff1;
        add_row(&mut z, &w.ff1_b);
        let mut ud = z.map(|v| v.max(0.0));
        if let Some(m) = &mask2 {
            ud.component_mul_assign(m);
        }
        let mut h2 = &h1 + &ud * &w.ff2;
        add_row(&mut h2, &w.ff2_b);
        let pooled = sum_rows(&h2) / tokens as f64;
        let y = &pooled * &w.head + &w.head_b;
        let mut out = [0.0; OUTPUTS];
        out.copy_from_slice(y.as_slice());
        (
            out,
            Cache {
                x: x.clone(),
                e,
                q,
                k,
                v,
                a,
                c,
                mask1,
                h1,
                z,
                mask2,
                ud,
                pooled,
            },
        )
    }

    /// Accumulates `d loss / d weights` into `grads` given `d loss / d output`.
    pub(crate) fn backward(&self, cache: &Cache, d_out: &[f64; OUTPUTS], grads: &mut Gradients) {
        let w = &self.weights;
        let tokens = cache.x.nrows();
        let inv_sqrt_d = 1.0 / (self.d_model as f64).sqrt();
        let dy = Tensor::from_row_slice(1, OUTPUTS, d_out);

        grads.head += cache.pooled.transpose() * &dy;
        grads.head_b += &dy;
        let d_pooled = &dy * w.head.transpose();

        let mut d_h2 = Tensor::zeros(tokens, self.d_model);
        for mut row in d_h2.row_iter_mut() {
            row.copy_from(&(&d_pooled / tokens as f64));
        }

        // Feed-forward block.
        grads.ff2 += cache.ud.transpose() * &d_h2;
        grads.ff2_b += sum_rows(&d_h2);
        let mut d_u = &d_h2 * w.ff2.transpose();
        if let Some(m) = &cache.mask2 {
            d_u.component_mul_assign(m);
        }
        let d_z = d_u.zip_map(&cache.z, |g, z| if z > 0.0 { g } else { 0.0 });
        grads.ff1 += cache.h1.transpose() * &d_z;
        grads.ff1_b += sum_rows(&d_z);
        let d_h1 = &d_h2 + &d_z * w.ff1.transpose();

        // Attention block.
        let mut d_o = d_h1.clone();
        if let Some(m) = &cache.mask1 {
            d_o.component_mul_assign(m);
        }
        grads.attn_out += cache.c.transpose() * &d_o;
        let d_c = &d_o * w.attn_out.transpose();
        let d_a = &d_c * cache.v.transpose();
        let d_v = cache.a.transpose() * &d_c;
        let mut d_s = Tensor::zeros(tokens, tokens);
        for i in 0..tokens {
            let dot: f64 = (0..tokens).map(|j| d_a[(i, j)] * cache.a[(i, j)]).sum();
            for j in 0..tokens {
                d_s[(i, j)] = cache.a[(i, j)] * (d_a[(i, j)] - dot) * inv_sqrt_d;
            }
        }
        let d_q = &d_s * &cache.k;
        let d_k = d_s.transpose() * &cache.q;
        grads.query += cache.e.transpose() * &d_q;
        grads.key += cache.e.transpose() * &d_k;
        grads.value += cache.e.transpose() * &d_v;
        let d_e = d_h1 + &d_q * w.query.transpose() + &d_k * w.key.transpose() + &d_v * w.value.transpose();

        grads.embed += cache.x.transpose() * &d_e;
        grads.embed_b += sum_rows(&d_e);
    }

    /// Predicts the next pose from a history. Dropout is applied only when a
    /// seed is supplied.
    pub fn forward(&self, history: &History, dropout_seed: Option<u64>) -> Result<RawOutput> {
        let (x, anchor) = self.features(history)?;
        let masks = self.draw_masks(x.nrows(), dropout_seed);
        let (raw, _) = self.forward_features(&x, masks);
        Ok(self.decode(&anchor, raw))
    }

    pub(crate) fn decode(&self, anchor: &Anchor, raw: [f64; OUTPUTS]) -> RawOutput {
        let mut log_var = [0.0; 4];
        log_var.copy_from_slice(&raw[4..]);
        RawOutput {
            raw,
            pose: self.from_body(anchor, &raw[..4]),
            log_var,
        }
    }

    pub fn to_file_format(&self) -> ModelFile {
        ModelFile {
            format_version: FORMAT_VERSION,
            horizon: self.horizon,
            d_model: self.d_model,
            d_ff: self.d_ff,
            dropout_rate: self.dropout_rate,
            scaling: self.scaling,
            tensors: TENSOR_NAMES
                .iter()
                .zip(self.weights.tensors())
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: [t.nrows(), t.ncols()],
                    data: t.transpose().as_slice().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_file_format(file: ModelFile) -> Result<Self> {
        if file.format_version != FORMAT_VERSION {
            return Err(Error::format(
                "model file",
                format!("unsupported format version {}", file.format_version),
            ));
        }
        let mut weights = Weights::zeros(file.d_model, file.d_ff);
        if file.tensors.len() != TENSOR_NAMES.len() {
            return Err(Error::format("model file", "wrong tensor count"));
        }
        for ((slot, name), nt) in weights.tensors_mut().into_iter().zip(TENSOR_NAMES).zip(&file.tensors) {
            if nt.name != name {
                return Err(Error::format(
                    "model file",
                    format!("expected tensor {name}, found {}", nt.name),
                ));
            }
            let [r, c] = nt.shape;
            if nt.data.len() != r * c {
                return Err(Error::format(
                    "model file",
                    format!("tensor {name} data length mismatch"),
                ));
            }
            *slot = Tensor::from_row_slice(r, c, &nt.data);
        }
        let model = PredictorModel {
            horizon: file.horizon,
            d_model: file.d_model,
            d_ff: file.d_ff,
            dropout_rate: file.dropout_rate,
            scaling: file.scaling,
            weights,
        };
        model.validate()?;
        Ok(model)
    }
}

/// On-disk model representation: row-major tensors with explicit shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub horizon: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout_rate: f64,
    pub scaling: InputScaling,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}
