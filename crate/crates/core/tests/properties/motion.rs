use proptest::prelude::*;
use radtrack::geometry::Pose;
use radtrack::motion::{mc_predict, mc_samples, History, PredictorModel};

use crate::common::{self, Property};

pub const SUITE: &[Property] = &[
    ("prediction_shifts_with_the_history", prediction_shifts_with_the_history),
    ("mc_summary_recomputes_from_samples", mc_summary_recomputes_from_samples),
];

fn history() -> impl Strategy<Value = History> {
    let noise = prop::collection::vec(prop::array::uniform4(-0.2..0.2f64), 6);
    (
        2usize..6,
        -50.0..50.0f64,
        -50.0..50.0f64,
        common::angle(),
        0.0..20.0f64,
        -0.5..0.5f64,
        noise,
    )
        .prop_map(|(n, x0, y0, yaw0, speed, turn, noise)| {
            let poses = (0..n).map(|k| {
                let yaw = yaw0 + turn * k as f64 * 0.1;
                let d = speed * 0.1 * k as f64;
                let e = noise[k];
                (
                    k as f64 * 0.1,
                    Pose::new(
                        x0 + d * yaw.cos() + e[0],
                        y0 + d * yaw.sin() + e[1],
                        0.5 + e[2],
                        yaw + e[3],
                    ),
                )
            });
            History::from_poses(5, poses).unwrap()
        })
}

fn model(seed: u64) -> PredictorModel {
    PredictorModel::init(5, 32, 64, 0.1, seed)
}

fn prediction_shifts_with_the_history() -> Result<(), String> {
    let inputs = (
        history(),
        prop::array::uniform3(-500.0..500.0f64),
        0u64..8,
        any::<u64>(),
    );
    common::check(inputs, |(h, offset, model_seed, dropout_seed)| {
        let m = model(model_seed);
        let shifted = h.translated(offset[0], offset[1], offset[2]);
        for seed in [None, Some(dropout_seed)] {
            let a = m.forward(&h, seed).unwrap().pose;
            let b = m.forward(&shifted, seed).unwrap().pose;
            prop_assert!((b.x - a.x - offset[0]).abs() <= 1e-9);
            prop_assert!((b.y - a.y - offset[1]).abs() <= 1e-9);
            prop_assert!((b.z - a.z - offset[2]).abs() <= 1e-9);
            prop_assert!((b.yaw - a.yaw).abs() <= 1e-9);
        }
        Ok(())
    })
}

fn mc_summary_recomputes_from_samples() -> Result<(), String> {
    common::check(
        (history(), 1usize..24, any::<u64>(), 0u64..8),
        |(h, n_p, seed, model_seed)| {
            let m = model(model_seed);
            let (samples, dist) = mc_samples(&m, &h, n_p, seed).unwrap();
            prop_assert_eq!(samples.len(), n_p);
            prop_assert_eq!(mc_predict(&m, &h, n_p, seed).unwrap(), dist);

            let n = n_p as f64;
            let mean = |f: fn(&Pose) -> f64| samples.iter().map(f).sum::<f64>() / n;
            let (mx, my, mz) = (mean(|p| p.x), mean(|p| p.y), mean(|p| p.z));
            let (s, c) = samples
                .iter()
                .fold((0.0, 0.0), |(s, c), p| (s + p.yaw.sin(), c + p.yaw.cos()));
            let myaw = s.atan2(c);
            let wrap =
                |a: f64| (a + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
            let var = [
                samples.iter().map(|p| (p.x - mx).powi(2)).sum::<f64>() / n,
                samples.iter().map(|p| (p.y - my).powi(2)).sum::<f64>() / n,
                samples.iter().map(|p| (p.z - mz).powi(2)).sum::<f64>() / n,
                samples.iter().map(|p| wrap(p.yaw - myaw).powi(2)).sum::<f64>() / n,
            ];
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + b.abs());
            prop_assert!(close(dist.mean.x, mx) && close(dist.mean.y, my) && close(dist.mean.z, mz));
            prop_assert!(wrap(dist.mean.yaw - myaw).abs() <= 1e-9);
            for k in 0..4 {
                prop_assert!(
                    (dist.variance[k] - var[k]).abs() <= 1e-12 + 1e-9 * var[k],
                    "var[{k}] {} vs {}",
                    dist.variance[k],
                    var[k]
                );
            }
            Ok(())
        },
    )
}
