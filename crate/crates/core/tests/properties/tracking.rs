use proptest::prelude::*;
use radtrack::geometry::{Box3D, Detection, Pose};
use radtrack::metrics::{gt_points, pred_points, sequence_tally};
use radtrack::motion::{cv_predict, PredictionDistribution};
use radtrack::sim::{self, Maneuver, NoiseModel, ObjectSpec, ScenarioSpec, Segment};
use radtrack::tracking::{
    kf_predict, kf_update, spawn_track, track_sequence, FrameContext, LifecycleParams, MeasurementNoiseMode,
    NoiseConfig, ProcessNoiseMode, TrackerConfig,
};

use crate::common::{self, Property};

pub const SUITE: &[Property] = &[
    ("covariance_stays_symmetric_psd", covariance_stays_symmetric_psd),
    (
        "single_noiseless_object_keeps_its_id",
        single_noiseless_object_keeps_its_id,
    ),
];

fn noise_config() -> impl Strategy<Value = NoiseConfig> {
    (any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>()).prop_map(|(mc, dv, fp, fm)| NoiseConfig {
        process: if mc {
            ProcessNoiseMode::McVariance
        } else {
            ProcessNoiseMode::Fixed
        },
        measurement: if dv {
            MeasurementNoiseMode::DetectionVariance
        } else {
            MeasurementNoiseMode::Fixed
        },
        floor_process: fp,
        floor_measurement: fm,
        ..NoiseConfig::default()
    })
}

#[derive(Debug, Clone)]
enum Step {
    Predict { dt: f64, variance: [f64; 4] },
    Update { offset: [f64; 4], std: [f64; 7] },
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        (0.01..1.0f64, prop::array::uniform4(0.0..2.0f64)).prop_map(|(dt, variance)| Step::Predict { dt, variance }),
        (prop::array::uniform4(-2.0..2.0f64), prop::array::uniform7(0.0..0.5f64))
            .prop_map(|(offset, std)| Step::Update { offset, std }),
    ]
}

fn covariance_stays_symmetric_psd() -> Result<(), String> {
    let inputs = (
        noise_config(),
        prop::array::uniform4(-40.0..40.0f64),
        -20.0..20.0f64,
        prop::collection::vec(step(), 1..40),
    );
    common::check(inputs, |(noise, start, doppler, steps)| {
        let params = LifecycleParams::default();
        let ctx = FrameContext {
            timestamp: 0.0,
            horizon: 3,
            sensor_origin: [0.0; 3],
            noise: &noise,
            params: &params,
        };
        let b = Box3D::new(start[0] + 50.0, start[1], 0.5, 4.5, 1.9, 1.6, start[3]).unwrap();
        let mut track = spawn_track(0, &Detection::new(b, doppler, 0.9), &ctx).unwrap();
        prop_assert!(track.cov.is_symmetric() && track.cov.is_psd());
        for s in steps {
            track = match s {
                Step::Predict { dt, variance } => {
                    let mean = cv_predict(&track.state, dt).unwrap().pose();
                    kf_predict(&track, &PredictionDistribution { mean, variance }, &noise, dt).unwrap()
                }
                Step::Update { offset, std } => {
                    let p = track.state;
                    let bbox = Box3D::new(
                        p.x + offset[0],
                        p.y + offset[1],
                        p.z + offset[2],
                        4.5,
                        1.9,
                        1.6,
                        p.yaw + offset[3],
                    )
                    .unwrap();
                    let det = Detection {
                        box_std: std,
                        ..Detection::new(bbox, doppler, 0.9)
                    };
                    kf_update(&track, &det, &noise).unwrap()
                }
            };
            prop_assert!(track.cov.is_symmetric(), "asymmetric {:?}", track.cov);
            prop_assert!(track.cov.is_psd(), "not PSD {:?}", track.cov);
            prop_assert!(track.state.is_finite());
        }
        Ok(())
    })
}

fn single_noiseless_object_keeps_its_id() -> Result<(), String> {
    let inputs = (
        (10.0..60.0f64, -20.0..20.0f64, common::angle()),
        0.0..20.0f64,
        prop::collection::vec((5usize..20, -0.3..0.3f64), 1..4),
        any::<u64>(),
    );
    common::check(inputs, |(start, speed, turns, seed)| {
        let segments = turns
            .into_iter()
            .map(|(frames, yaw_rate)| Segment {
                frames,
                maneuver: Maneuver::ConstantTurn { yaw_rate },
            })
            .collect();
        let spec = ScenarioSpec {
            duration_frames: 50,
            objects: vec![ObjectSpec {
                id: 7,
                start: Pose::new(start.0, start.1, 0.8, start.2),
                speed,
                size: [4.5, 1.9, 1.6],
                segments,
            }],
            noise: NoiseModel::noiseless(),
            clutter_rate: 0.0,
            detection_prob: 1.0,
            n_d: 4,
            seed,
            ..ScenarioSpec::default()
        };
        let (gt, samples) = sim::generate(&spec).unwrap();
        let frames = track_sequence(&samples, &TrackerConfig::default(), None).unwrap();
        let tally = sequence_tally(&pred_points(&frames), &gt_points(&gt), f64::NEG_INFINITY, 2.0);
        prop_assert_eq!(tally.ids, 0);
        prop_assert_eq!(tally.fp, 0);
        // The first frame only creates a tentative track.
        prop_assert_eq!(tally.tp, 49);
        Ok(())
    })
}
