use nalgebra::{DMatrix, Matrix4, Vector4};
use proptest::prelude::*;
use radtrack::association::{
    assignment_cost, associate, hungarian, innovation_covariance, mahalanobis, AssociationConfig, AssociationMode,
    AssociationResult, TrackPrediction,
};
use radtrack::geometry::{Box3D, Covariance7, Detection, KinematicState};

use crate::common::{self, Property};

pub const SUITE: &[Property] = &[
    ("output_partitions_both_sides", output_partitions_both_sides),
    (
        "stage_one_respects_gate_and_stage_two_only_adds",
        stage_one_respects_gate_and_stage_two_only_adds,
    ),
    ("scaling_costs_keeps_the_pairing", scaling_costs_keeps_the_pairing),
    ("hungarian_matches_brute_force", hungarian_matches_brute_force),
];

#[derive(Debug, Clone)]
struct Scene {
    tracks: Vec<TrackPrediction>,
    detections: Vec<Detection>,
    r: Vec<Matrix4<f64>>,
}

fn scene() -> impl Strategy<Value = Scene> {
    let track = (
        prop::array::uniform4(-15.0..15.0f64),
        prop::array::uniform3(-15.0..15.0f64),
        0.01..2.0f64,
    );
    let det = (
        prop::array::uniform4(-15.0..15.0f64),
        -20.0..20.0f64,
        0.05..1.0f64,
        0.01..1.0f64,
    );
    (prop::collection::vec(track, 0..8), prop::collection::vec(det, 0..8)).prop_map(|(ts, ds)| Scene {
        tracks: ts
            .into_iter()
            .enumerate()
            .map(|(i, (p, v, var))| TrackPrediction {
                id: 100 + i as u64,
                state: KinematicState {
                    x: p[0] + 30.0,
                    y: p[1],
                    z: p[2] * 0.1,
                    yaw: p[3] * 0.2,
                    vx: v[0],
                    vy: v[1],
                    vz: v[2] * 0.1,
                },
                cov: Covariance7::from_diagonal(&[var, var, var * 0.5, var * 0.1, 1.0, 1.0, 0.1]),
            })
            .collect(),
        detections: ds
            .iter()
            .map(|&(p, dop, conf, _)| {
                Detection::new(
                    Box3D::new(p[0] + 30.0, p[1], p[2] * 0.1, 4.0, 2.0, 1.5, p[3] * 0.2).unwrap(),
                    dop,
                    conf,
                )
            })
            .collect(),
        r: ds
            .iter()
            .map(|&(.., rv)| Matrix4::from_diagonal(&Vector4::new(rv, rv, rv, 0.01)))
            .collect(),
    })
}

fn run(s: &Scene, mode: AssociationMode) -> AssociationResult {
    let cfg = AssociationConfig {
        mode,
        ..Default::default()
    };
    associate(&s.tracks, &s.detections, &s.r, [0.0, 0.0, 0.0], &cfg).unwrap()
}

fn output_partitions_both_sides() -> Result<(), String> {
    common::check(scene(), |s| {
        for mode in [AssociationMode::TwoStage, AssociationMode::MahalanobisOnly] {
            let out = run(&s, mode);
            prop_assert_eq!(out.matches.len() + out.unmatched_tracks.len(), s.tracks.len());
            prop_assert_eq!(out.matches.len() + out.unmatched_detections.len(), s.detections.len());
            let mut ids: Vec<u64> = out
                .matches
                .iter()
                .map(|m| m.track_id)
                .chain(out.unmatched_tracks.iter().copied())
                .collect();
            ids.sort_unstable();
            let mut expected: Vec<u64> = s.tracks.iter().map(|t| t.id).collect();
            expected.sort_unstable();
            prop_assert_eq!(ids, expected);
            let mut dets: Vec<usize> = out
                .matches
                .iter()
                .map(|m| m.detection)
                .chain(out.unmatched_detections.iter().copied())
                .collect();
            dets.sort_unstable();
            prop_assert_eq!(dets, (0..s.detections.len()).collect::<Vec<_>>());
        }
        Ok(())
    })
}

fn stage_one_respects_gate_and_stage_two_only_adds() -> Result<(), String> {
    let gate1 = AssociationConfig::default().gate1;
    common::check(scene(), move |s| {
        let two = run(&s, AssociationMode::TwoStage);
        let one = run(&s, AssociationMode::MahalanobisOnly);
        for m in two.matches.iter().filter(|m| m.stage == 1) {
            let t = s.tracks.iter().find(|t| t.id == m.track_id).unwrap();
            let sm = innovation_covariance(&t.cov, &s.r[m.detection]);
            prop_assert!(mahalanobis(&s.detections[m.detection], &t.state.pose(), &sm).unwrap() <= gate1);
        }
        prop_assert!(one.matches.len() <= two.matches.len());
        prop_assert_eq!(two.matches.iter().filter(|m| m.stage == 1).count(), one.matches.len());
        Ok(())
    })
}

fn scaling_costs_keeps_the_pairing() -> Result<(), String> {
    let inputs = (
        (1usize..8, 1usize..8),
        prop::collection::vec(0.0..100.0f64, 49),
        prop_oneof![1e-3..1.0f64, 1.0..1e3f64],
    );
    common::check(inputs, |(dims, values, k)| {
        let m = DMatrix::from_fn(dims.0, dims.1, |i, j| values[i * 7 + j]);
        prop_assert_eq!(hungarian(&(&m * k)), hungarian(&m));
        Ok(())
    })
}

fn hungarian_matches_brute_force() -> Result<(), String> {
    common::check(common::integer_matrix(7), |m| {
        let pairs = hungarian(&m);
        prop_assert_eq!(pairs.len(), m.nrows().min(m.ncols()));
        let mut rows: Vec<_> = pairs.iter().map(|p| p.0).collect();
        let mut cols: Vec<_> = pairs.iter().map(|p| p.1).collect();
        rows.sort_unstable();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        prop_assert_eq!(rows.len(), pairs.len());
        prop_assert_eq!(cols.len(), pairs.len());
        prop_assert_eq!(assignment_cost(&m, &pairs), common::brute_force_min(&m));
        Ok(())
    })
}
