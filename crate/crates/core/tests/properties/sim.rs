use proptest::prelude::*;
use radtrack::fusion::{fuse_frame, FusionConfig};
use radtrack::geometry::Pose;
use radtrack::sim::{generate, Maneuver, NoiseModel, ObjectSpec, ScenarioSpec, Segment};

use crate::common::{self, Property};

pub const SUITE: &[Property] = &[
    ("generation_is_deterministic", generation_is_deterministic),
    ("clutter_count_matches_rate", clutter_count_matches_rate),
    (
        "per_pass_detection_rate_matches_p_d",
        per_pass_detection_rate_matches_p_d,
    ),
    ("fused_spread_grows_with_jitter", fused_spread_grows_with_jitter),
];

fn object(id: u64) -> impl Strategy<Value = ObjectSpec> {
    (
        prop::array::uniform2(5.0..80.0f64),
        common::angle(),
        0.0..25.0f64,
        prop::collection::vec((1usize..15, -0.4..0.4f64, any::<bool>()), 0..4),
    )
        .prop_map(move |(xy, yaw, speed, segs)| ObjectSpec {
            id,
            start: Pose::new(xy[0], xy[1] - 40.0, 0.8, yaw),
            speed,
            size: [4.5, 1.9, 1.6],
            segments: segs
                .into_iter()
                .map(|(frames, yaw_rate, stop)| Segment {
                    frames,
                    maneuver: if stop {
                        Maneuver::StopGo {
                            decel: 3.0,
                            hold_frames: 3,
                            accel: 2.0,
                            resume_speed: 8.0,
                        }
                    } else {
                        Maneuver::ConstantTurn { yaw_rate }
                    },
                })
                .collect(),
        })
}

fn scenario() -> impl Strategy<Value = ScenarioSpec> {
    (0usize..4, 0.0..4.0f64, 0.5..1.0f64, 1usize..6, 1usize..25, any::<u64>())
        .prop_flat_map(|(ids, clutter, p_d, n_d, frames, seed)| {
            let objs: Vec<_> = (0..ids as u64).map(object).collect();
            (objs, Just((clutter, p_d, n_d, frames, seed)))
        })
        .prop_map(
            |(objects, (clutter_rate, detection_prob, n_d, duration_frames, seed))| ScenarioSpec {
                objects,
                clutter_rate,
                detection_prob,
                n_d,
                duration_frames,
                seed,
                ..ScenarioSpec::default()
            },
        )
}

fn generation_is_deterministic() -> Result<(), String> {
    common::check(scenario(), |spec| {
        let (gt_a, s_a) = generate(&spec).unwrap();
        let (gt_b, s_b) = generate(&spec.clone()).unwrap();
        prop_assert_eq!(
            serde_json::to_string(&gt_a).unwrap(),
            serde_json::to_string(&gt_b).unwrap()
        );
        prop_assert_eq!(
            serde_json::to_string(&s_a).unwrap(),
            serde_json::to_string(&s_b).unwrap()
        );
        prop_assert_eq!(gt_a.len(), spec.duration_frames);
        Ok(())
    })
}

const FRAMES: usize = 10_000;

fn clutter_count_matches_rate() -> Result<(), String> {
    for (k, lambda) in [0.5, 2.0, 6.0].into_iter().enumerate() {
        let spec = ScenarioSpec {
            duration_frames: FRAMES,
            clutter_rate: lambda,
            clutter_pass_prob: 1.0,
            n_d: 1,
            seed: 11 + k as u64,
            ..ScenarioSpec::default()
        };
        let (_, samples) = generate(&spec).unwrap();
        let total: usize = samples.iter().map(|s| s.passes[0].len()).sum();
        let mean = total as f64 / FRAMES as f64;
        let se = (lambda / FRAMES as f64).sqrt();
        if (mean - lambda).abs() > 3.0 * se {
            return Err(format!("lambda {lambda}: mean {mean}, se {se}"));
        }
    }
    Ok(())
}

fn per_pass_detection_rate_matches_p_d() -> Result<(), String> {
    for (k, p_d) in [0.3, 0.7, 0.95].into_iter().enumerate() {
        let spec = ScenarioSpec {
            duration_frames: FRAMES,
            objects: vec![ObjectSpec {
                id: 0,
                start: Pose::new(30.0, 0.0, 0.8, 0.0),
                speed: 0.0,
                size: [4.5, 1.9, 1.6],
                segments: vec![],
            }],
            clutter_rate: 0.0,
            detection_prob: p_d,
            n_d: 10,
            seed: 21 + k as u64,
            ..ScenarioSpec::default()
        };
        let (_, samples) = generate(&spec).unwrap();
        let hits: usize = samples.iter().flat_map(|s| &s.passes).map(Vec::len).sum();
        let trials = (FRAMES * spec.n_d) as f64;
        let rate = hits as f64 / trials;
        let se = (p_d * (1.0 - p_d) / trials).sqrt();
        if (rate - p_d).abs() > 3.0 * se {
            return Err(format!("p_d {p_d}: rate {rate}, se {se}"));
        }
    }
    Ok(())
}

fn fused_spread_grows_with_jitter() -> Result<(), String> {
    common::check((any::<u64>(), common::angle(), 0.0..20.0f64), |(seed, yaw, speed)| {
        let levels = [0.02, 0.05, 0.1, 0.2, 0.35];
        let spread: Vec<f64> = levels
            .iter()
            .map(|&j| {
                let spec = ScenarioSpec {
                    duration_frames: 10,
                    objects: vec![ObjectSpec {
                        id: 0,
                        start: Pose::new(30.0, 0.0, 0.8, yaw),
                        speed,
                        size: [4.5, 1.9, 1.6],
                        segments: vec![],
                    }],
                    noise: NoiseModel {
                        jitter_sigma: [j, j, j / 3.0, j / 8.0],
                        ..NoiseModel::default()
                    },
                    clutter_rate: 0.0,
                    seed,
                    ..ScenarioSpec::default()
                };
                let (_, samples) = generate(&spec).unwrap();
                let stds: Vec<f64> = samples
                    .iter()
                    .flat_map(|s| fuse_frame(s, &FusionConfig::default()))
                    .map(|d| d.box_std[0] + d.box_std[1])
                    .collect();
                stds.iter().sum::<f64>() / stds.len() as f64
            })
            .collect();
        prop_assert!(spread.windows(2).all(|w| w[1] > w[0]), "{spread:?}");
        Ok(())
    })
}
