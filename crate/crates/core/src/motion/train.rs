//! SGD-with-momentum training of the predictor on the attenuated loss.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::network::{Gradients, PredictorModel, OUTPUTS};
use super::History;
use crate::error::{Error, Result};
use crate::fusion::{attenuated_loss, attenuated_loss_grad};
use crate::geometry::Pose;
use crate::rng::{mix_seed, rng};

/// A history paired with the pose observed one frame later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub history: History,
    pub target: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm clip, disabled when `None`.
    pub grad_clip: Option<f64>,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout_rate: f64,
    /// Gaussian jitter added to history poses each epoch (x, y, z, yaw).
    pub history_noise: [f64; 4],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 2e-3,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
            grad_clip: Some(5.0),
            d_model: 32,
            d_ff: 64,
            dropout_rate: 0.1,
            history_noise: [0.05, 0.05, 0.01, 0.007],
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PredictorModel,
    /// Deterministic (no dropout) mean loss over the dataset; entry 0 is the
    /// initialized model, entry `k` is after epoch `k`.
    pub losses: Vec<f64>,
    /// Epoch whose weights were returned (0 means the initialization).
    pub best_epoch: usize,
}

/// Attenuated loss over the 4 pose components of every sample (averaged over
/// all `4 * len` terms) and its gradient with respect to every weight.
pub fn sample_loss_and_grad(
    model: &PredictorModel,
    samples: &[TrainingSample],
    dropout_seeds: &[Option<u64>],
) -> Result<(f64, Gradients)> {
    if samples.is_empty() || samples.len() != dropout_seeds.len() {
        return Err(Error::invalid(
            "need one dropout seed per sample and at least one sample",
        ));
    }
    let b = samples.len() as f64;
    let mut grads = model.weights.zeros_like();
    let mut total = 0.0;
    for (sample, seed) in samples.iter().zip(dropout_seeds) {
        let (x, anchor) = model.features(&sample.history)?;
        let target = model.to_body(&anchor, &sample.target);
        let masks = model.draw_masks(x.nrows(), *seed);
        let (y, cache) = model.forward_features(&x, masks);
        let residuals: Vec<f64> = (0..4).map(|i| target[i] - y[i]).collect();
        let log_vars = &y[4..];
        total += attenuated_loss(&residuals, log_vars)?;
        let (d_r, d_lv) = attenuated_loss_grad(&residuals, log_vars)?;
        let mut d_out = [0.0; OUTPUTS];
        for i in 0..4 {
            d_out[i] = -d_r[i] / b;
            d_out[4 + i] = d_lv[i] / b;
        }
        model.backward(&cache, &d_out, &mut grads);
    }
    Ok((total / b, grads))
}

/// Mean deterministic loss over a dataset.
pub fn evaluate_loss(model: &PredictorModel, samples: &[TrainingSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let mut total = 0.0;
    for s in samples {
        let (x, anchor) = model.features(&s.history)?;
        let target = model.to_body(&anchor, &s.target);
        let (y, _) = model.forward_features(&x, None);
        let r: Vec<f64> = (0..4).map(|i| target[i] - y[i]).collect();
        total += attenuated_loss(&r, &y[4..])?;
    }
    Ok(total / samples.len() as f64)
}

fn jitter(
    sample: &TrainingSample,
    noise: &[Normal<f64>; 4],
    r: &mut rand_chacha::ChaCha8Rng,
) -> Result<TrainingSample> {
    let history = History::from_poses(
        sample.history.horizon(),
        sample.history.iter().map(|&(t, p)| {
            (
                t,
                Pose::new(
                    p.x + noise[0].sample(r),
                    p.y + noise[1].sample(r),
                    p.z + noise[2].sample(r),
                    crate::geometry::wrap_angle(p.yaw + noise[3].sample(r)),
                ),
            )
        }),
    )?;
    Ok(TrainingSample {
        history,
        target: sample.target,
    })
}

/// Trains a fresh model and returns the lowest-loss snapshot, so the final
/// loss never exceeds the initial one.
pub fn train_predictor(dataset: &[TrainingSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if !(0.0..1.0).contains(&cfg.dropout_rate) {
        return Err(Error::invalid("dropout rate must lie in [0, 1)"));
    }
    let horizon = dataset.iter().map(|s| s.history.horizon()).max().unwrap_or(1);
    if let Some(s) = dataset.iter().find(|s| s.history.is_empty()) {
        return Err(Error::invalid(format!(
            "sample with empty history (target {:?})",
            s.target
        )));
    }
    let mut model = PredictorModel::init(
        horizon,
        cfg.d_model,
        cfg.d_ff,
        cfg.dropout_rate,
        mix_seed(cfg.seed, 0x1417),
    );
    let initial = evaluate_loss(&model, dataset)?;
    if !initial.is_finite() {
        return Err(Error::TrainingDiverged {
            epoch: 0,
            loss: initial,
        });
    }
    let mut losses = vec![initial];
    let mut best = (initial, 0usize, model.clone());
    let mut velocity = model.weights.zeros_like();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut shuffle_rng = rng(mix_seed(cfg.seed, 0x5eed));
    let noise = cfg
        .history_noise
        .map(|s| Normal::new(0.0, s.max(0.0)).expect("valid sigma"));
    let augment = cfg.history_noise.iter().any(|&s| s > 0.0);
    let mut step: u64 = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut noise_rng = rng(mix_seed(cfg.seed, 0xa000 + epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainingSample> = if augment {
                chunk
                    .iter()
                    .map(|&i| jitter(&dataset[i], &noise, &mut noise_rng))
                    .collect::<Result<_>>()?
            } else {
                chunk.iter().map(|&i| dataset[i].clone()).collect()
            };
            let seeds: Vec<Option<u64>> = (0..batch.len())
                .map(|i| (cfg.dropout_rate > 0.0).then(|| mix_seed(cfg.seed, (step << 16) ^ i as u64)))
                .collect();
            step += 1;
            let (_, mut grads) = sample_loss_and_grad(&model, &batch, &seeds)?;
            if let Some(clip) = cfg.grad_clip {
                let norm = grads.norm_squared().sqrt();
                if norm > clip {
                    grads.scale(clip / norm);
                }
            }
            velocity.scale(cfg.momentum);
            velocity.add_scaled(&grads, -cfg.learning_rate);
            model.weights.add_scaled(&velocity, 1.0);
        }
        let loss = evaluate_loss(&model, dataset)?;
        if !loss.is_finite() || !model.weights.all_finite() {
            return Err(Error::TrainingDiverged { epoch, loss });
        }
        losses.push(loss);
        if loss < best.0 {
            best = (loss, epoch, model.clone());
        }
    }

    Ok(TrainOutcome {
        model: best.2,
        losses,
        best_epoch: best.1,
    })
}
