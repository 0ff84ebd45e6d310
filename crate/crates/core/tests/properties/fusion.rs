use proptest::prelude::*;
use radtrack::fusion::{attenuated_loss, attenuated_loss_grad, fuse_frame, FusionConfig, SampleSet};
use radtrack::geometry::{Box3D, Detection};

use crate::common::{self, Property};

pub const SUITE: &[Property] = &[
    ("fused_box_ignores_member_order", fused_box_ignores_member_order),
    (
        "box_std_vanishes_exactly_for_identical_members",
        box_std_vanishes_exactly_for_identical_members,
    ),
    ("unit_variance_loss_is_half_mse", unit_variance_loss_is_half_mse),
    (
        "loss_is_minimized_at_squared_residual",
        loss_is_minimized_at_squared_residual,
    ),
    (
        "loss_gradient_matches_central_differences",
        loss_gradient_matches_central_differences,
    ),
];

fn jittered(base: Box3D, d: [f64; 4]) -> Box3D {
    Box3D::new(
        base.x + d[0],
        base.y + d[1],
        base.z + d[2],
        base.l,
        base.w,
        base.h,
        base.yaw + d[3] / 3.0,
    )
    .unwrap()
}

fn single_cluster(boxes: &[(Box3D, f64, f64)]) -> Detection {
    let passes = boxes
        .iter()
        .map(|&(b, dop, conf)| vec![Detection::new(b, dop, conf)])
        .collect();
    let fused = fuse_frame(&SampleSet::new(0, 0.0, passes).unwrap(), &FusionConfig::default());
    assert_eq!(fused.len(), 1, "members should form one cluster");
    fused[0]
}

fn members() -> impl Strategy<Value = Vec<(Box3D, f64, f64)>> {
    let jitter = (prop::array::uniform4(-0.15..0.15f64), -20.0..20.0f64, 0.05..1.0f64);
    (common::car_near(20.0, 3.0, 5.0), prop::collection::vec(jitter, 2..12))
        .prop_map(|(base, js)| js.into_iter().map(|(d, dop, c)| (jittered(base, d), dop, c)).collect())
}

fn fused_box_ignores_member_order() -> Result<(), String> {
    common::check((members(), any::<u64>()), |(m, shuffle_seed)| {
        use rand::{seq::SliceRandom, SeedableRng};
        let mut permuted = m.clone();
        permuted.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle_seed));
        let (a, b) = (single_cluster(&m), single_cluster(&permuted));
        for (x, y) in a
            .bbox
            .params()
            .iter()
            .zip(b.bbox.params())
            .chain(a.box_std.iter().zip(b.box_std))
        {
            prop_assert!((x - y).abs() <= 1e-9, "{a:?} vs {b:?}");
        }
        prop_assert!((a.doppler - b.doppler).abs() <= 1e-9);
        prop_assert!((a.confidence - b.confidence).abs() <= 1e-12);
        Ok(())
    })
}

fn box_std_vanishes_exactly_for_identical_members() -> Result<(), String> {
    let inputs = (
        common::car_near(0.0, 10.0, 20.0),
        2usize..12,
        0usize..7,
        prop_oneof![-0.2..-1e-6f64, 1e-6..0.2f64],
        0usize..12,
    );
    common::check(inputs, |(b, n, which, delta, victim)| {
        let same: Vec<_> = (0..n).map(|_| (b, 1.0, 0.8)).collect();
        prop_assert!(single_cluster(&same).box_std.iter().all(|&s| s == 0.0));
        let mut p = b.params();
        p[which] += delta;
        let odd = Box3D::new(p[0], p[1], p[2], p[3], p[4], p[5], p[6]).unwrap();
        let mut mixed = same;
        mixed[victim % n].0 = odd;
        prop_assert!(single_cluster(&mixed).box_std.iter().any(|&s| s > 0.0));
        Ok(())
    })
}

fn unit_variance_loss_is_half_mse() -> Result<(), String> {
    common::check(prop::collection::vec(-50.0..50.0f64, 1..16), |r| {
        let zeros = vec![0.0; r.len()];
        let half_mse = r.iter().map(|x| 0.5 * x * x).sum::<f64>() / r.len() as f64;
        prop_assert_eq!(attenuated_loss(&r, &zeros).unwrap(), half_mse);
        Ok(())
    })
}

fn loss_is_minimized_at_squared_residual() -> Result<(), String> {
    common::check(prop_oneof![-10.0..-0.01f64, 0.01..10.0f64], |r| {
        let target = (r * r).ln();
        let step = 1e-3;
        let f = |lv: f64| attenuated_loss(&[r], &[lv]).unwrap();
        let best = (-2000..=2000)
            .map(|k| target + k as f64 * step)
            .min_by(|a, b| f(*a).total_cmp(&f(*b)))
            .unwrap();
        prop_assert!((best - target).abs() <= step, "argmin {best} vs ln r^2 {target}");
        Ok(())
    })
}

fn loss_gradient_matches_central_differences() -> Result<(), String> {
    common::check(prop::collection::vec((-3.0..3.0f64, -2.0..2.0f64), 1..8), |pairs| {
        let (r, lv): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (d_r, d_lv) = attenuated_loss_grad(&r, &lv).unwrap();
        let h = 1e-5;
        let rel = |analytic: f64, plus: f64, minus: f64| {
            let fd = (plus - minus) / (2.0 * h);
            (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-2)
        };
        for i in 0..r.len() {
            let (mut rp, mut rm) = (r.clone(), r.clone());
            rp[i] += h;
            rm[i] -= h;
            let e = rel(
                d_r[i],
                attenuated_loss(&rp, &lv).unwrap(),
                attenuated_loss(&rm, &lv).unwrap(),
            );
            prop_assert!(e < 1e-6, "d/dr[{i}] rel err {e}");
            let (mut lp, mut lm) = (lv.clone(), lv.clone());
            lp[i] += h;
            lm[i] -= h;
            let e = rel(
                d_lv[i],
                attenuated_loss(&r, &lp).unwrap(),
                attenuated_loss(&r, &lm).unwrap(),
            );
            prop_assert!(e < 1e-6, "d/dlv[{i}] rel err {e}");
        }
        Ok(())
    })
}
