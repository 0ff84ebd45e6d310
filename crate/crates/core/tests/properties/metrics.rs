use proptest::prelude::*;
use radtrack::metrics::{amota, GtPoint, MetricsConfig, PredPoint};

use crate::common::{self, Property};

pub const SUITE: &[Property] = &[
    ("false_positives_never_help", false_positives_never_help),
    ("relabeling_tracks_changes_nothing", relabeling_tracks_changes_nothing),
    (
        "rows_conserve_ground_truth_and_bound_motar",
        rows_conserve_ground_truth_and_bound_motar,
    ),
];

#[derive(Debug, Clone)]
struct Sequence {
    gt: Vec<Vec<GtPoint>>,
    preds: Vec<Vec<PredPoint>>,
}

const ID_POOL: u64 = 8;

fn frame() -> impl Strategy<Value = (Vec<GtPoint>, Vec<PredPoint>)> {
    let gt = prop::collection::vec(prop::array::uniform2(-20.0..20.0f64), 0..5);
    let near = prop::collection::vec(
        (prop::bool::weighted(0.8), prop::array::uniform2(-2.5..2.5f64), 0u8..10),
        5,
    );
    let extra = prop::collection::vec((prop::array::uniform2(-20.0..20.0f64), 0u8..10), 0..3);
    let ids = Just((0..ID_POOL).collect::<Vec<_>>()).prop_shuffle();
    (gt, near, extra, ids).prop_map(|(gt, near, extra, ids)| {
        let gts: Vec<GtPoint> = gt
            .iter()
            .enumerate()
            .map(|(i, &xy)| GtPoint { id: i as u64, xy })
            .collect();
        let mut preds = Vec::new();
        for (g, &(keep, off, s)) in gts.iter().zip(&near) {
            if keep {
                preds.push(([g.xy[0] + off[0], g.xy[1] + off[1]], s));
            }
        }
        preds.extend(extra);
        let preds = preds
            .into_iter()
            .zip(ids)
            .map(|((xy, s), id)| PredPoint {
                id,
                xy,
                score: f64::from(s) / 10.0,
            })
            .collect();
        (gts, preds)
    })
}

fn sequence() -> impl Strategy<Value = Sequence> {
    prop::collection::vec(frame(), 1..10)
        .prop_map(|fs| {
            let (gt, preds) = fs.into_iter().unzip();
            Sequence { gt, preds }
        })
        .prop_filter("needs ground truth", |s| s.gt.iter().any(|f| !f.is_empty()))
}

fn score(s: &Sequence) -> (f64, f64) {
    let r = amota(&s.preds, &s.gt, &MetricsConfig::default()).unwrap();
    (r.amota, r.amotp)
}

fn false_positives_never_help() -> Result<(), String> {
    let inputs = (sequence(), any::<prop::sample::Index>(), 0.0..1.0f64, 100u64..200);
    common::check(inputs, |(s, frame, sc, id)| {
        let base = score(&s).0;
        let mut more = s.clone();
        let f = frame.index(more.preds.len());
        more.preds[f].push(PredPoint {
            id,
            xy: [1e4, 1e4],
            score: sc,
        });
        let added = score(&more).0;
        prop_assert!(added <= base, "adding a false positive raised AMOTA {base} -> {added}");
        let mut fewer = more.clone();
        fewer.preds[f].pop();
        prop_assert!(score(&fewer).0 >= added);
        Ok(())
    })
}

fn relabeling_tracks_changes_nothing() -> Result<(), String> {
    let perm = Just((0..ID_POOL).collect::<Vec<_>>()).prop_shuffle();
    common::check((sequence(), perm), |(s, perm)| {
        let mut relabeled = s.clone();
        for p in relabeled.preds.iter_mut().flatten() {
            p.id = perm[p.id as usize] + 1000;
        }
        prop_assert_eq!(score(&s), score(&relabeled));
        Ok(())
    })
}

fn rows_conserve_ground_truth_and_bound_motar() -> Result<(), String> {
    common::check(sequence(), |s| {
        let r = amota(&s.preds, &s.gt, &MetricsConfig::default()).unwrap();
        let p: usize = s.gt.iter().map(Vec::len).sum();
        prop_assert_eq!(r.gt_count, p);
        for row in &r.rows {
            prop_assert_eq!(row.tp + row.fn_, p);
            prop_assert!((0.0..=1.0).contains(&row.motar));
        }
        prop_assert!((0.0..=1.0).contains(&r.amota));
        Ok(())
    })
}
