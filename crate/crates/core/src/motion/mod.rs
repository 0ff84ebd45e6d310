//! Motion prediction: the constant-velocity baseline and the attention-based
//! sequence predictor sampled with Monte-Carlo dropout.

mod network;
mod train;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, KinematicState, Pose};
use crate::rng::mix_seed;

pub use network::{
    Gradients, InputScaling, ModelFile, NamedTensor, PredictorModel, RawOutput, Tensor, FEATURES, OUTPUTS,
};
pub use train::{evaluate_loss, sample_loss_and_grad, train_predictor, TrainConfig, TrainOutcome, TrainingSample};

/// Advances position by `velocity * dt`; yaw and velocity are unchanged.
pub fn cv_predict(state: &KinematicState, dt: f64) -> Result<KinematicState> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    Ok(KinematicState {
        x: state.x + state.vx * dt,
        y: state.y + state.vy * dt,
        z: state.z + state.vz * dt,
        ..*state
    })
}

/// Up to `horizon` timestamped poses, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    horizon: usize,
    entries: VecDeque<(f64, Pose)>,
}

impl History {
    pub fn new(horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("history horizon must be at least 1"));
        }
        Ok(History {
            horizon,
            entries: VecDeque::with_capacity(horizon + 1),
        })
    }

    pub fn from_poses(horizon: usize, poses: impl IntoIterator<Item = (f64, Pose)>) -> Result<Self> {
        let mut h = History::new(horizon)?;
        for (t, p) in poses {
            h.push(t, p)?;
        }
        Ok(h)
    }

    /// Appends a pose, evicting the oldest entry once the horizon is full.
    pub fn push(&mut self, timestamp: f64, pose: Pose) -> Result<()> {
        if let Some(&(last, _)) = self.entries.back() {
            if !(timestamp > last) {
                return Err(Error::invalid(format!(
                    "history timestamps must increase ({timestamp} after {last})"
                )));
            }
        }
        self.entries.push_back((timestamp, pose));
        while self.entries.len() > self.horizon {
            self.entries.pop_front();
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<(f64, Pose)> {
        self.entries.back().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(f64, Pose)> {
        self.entries.iter()
    }

    /// Same history with every pose shifted by a constant offset.
    pub fn translated(&self, dx: f64, dy: f64, dz: f64) -> Self {
        History {
            horizon: self.horizon,
            entries: self
                .entries
                .iter()
                .map(|&(t, p)| (t, p.translated(dx, dy, dz)))
                .collect(),
        }
    }
}

/// Mean and diagonal variance over `[x, y, z, yaw]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionDistribution {
    pub mean: Pose,
    pub variance: [f64; 4],
}

impl PredictionDistribution {
    pub fn deterministic(mean: Pose) -> Self {
        PredictionDistribution {
            mean,
            variance: [0.0; 4],
        }
    }

    /// Sample mean and population variance (divisor N). Yaw uses the circular
    /// mean and wrapped deviations.
    pub fn from_samples(samples: &[Pose]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("need at least one prediction sample"));
        }
        let n = samples.len() as f64;
        // Accumulate offsets from the first sample so identical samples
        // reproduce it exactly.
        let first = samples[0];
        let mut acc = [0.0; 3];
        let (mut s, mut c) = (0.0, 0.0);
        for p in samples {
            acc[0] += p.x - first.x;
            acc[1] += p.y - first.y;
            acc[2] += p.z - first.z;
            let d = wrap_angle(p.yaw - first.yaw);
            s += d.sin();
            c += d.cos();
        }
        let mean = Pose::new(
            first.x + acc[0] / n,
            first.y + acc[1] / n,
            first.z + acc[2] / n,
            wrap_angle(first.yaw + s.atan2(c)),
        );
        let mut var = [0.0; 4];
        for p in samples {
            var[0] += (p.x - mean.x).powi(2);
            var[1] += (p.y - mean.y).powi(2);
            var[2] += (p.z - mean.z).powi(2);
            var[3] += wrap_angle(p.yaw - mean.yaw).powi(2);
        }
        Ok(PredictionDistribution {
            mean,
            variance: var.map(|v| v / n),
        })
    }
}

/// Single forward pass. Dropout is active only when a seed is given.
pub fn predictor_forward(
    model: &PredictorModel,
    history: &History,
    dropout_seed: Option<u64>,
) -> Result<(Pose, [f64; 4])> {
    let out = model.forward(history, dropout_seed)?;
    Ok((out.pose, out.log_var))
}

/// Runs `n_p` dropout-perturbed forward passes and summarizes them.
pub fn mc_predict(
    model: &PredictorModel,
    history: &History,
    n_p: usize,
    rng_seed: u64,
) -> Result<PredictionDistribution> {
    Ok(mc_samples(model, history, n_p, rng_seed)?.1)
}

/// Like [`mc_predict`] but also returns the individual samples.
pub fn mc_samples(
    model: &PredictorModel,
    history: &History,
    n_p: usize,
    rng_seed: u64,
) -> Result<(Vec<Pose>, PredictionDistribution)> {
    if n_p < 1 {
        return Err(Error::invalid("n_p must be at least 1"));
    }
    let samples = (0..n_p)
        .map(|i| {
            let seed = (model.dropout_rate > 0.0).then(|| mix_seed(rng_seed, i as u64));
            model.forward(history, seed).map(|o| o.pose)
        })
        .collect::<Result<Vec<_>>>()?;
    let dist = PredictionDistribution::from_samples(&samples)?;
    Ok((samples, dist))
}
