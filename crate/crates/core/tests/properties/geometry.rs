use proptest::prelude::*;
use radtrack::geometry::{bev_iou, radial_velocity, yaw_normalize, Box3D, KinematicState, Pose};

use crate::common::{self, Property};

pub const SUITE: &[Property] = &[
    ("iou_is_symmetric", iou_is_symmetric),
    ("iou_survives_rigid_motion", iou_survives_rigid_motion),
    (
        "radial_velocity_is_linear_in_velocity",
        radial_velocity_is_linear_in_velocity,
    ),
    ("yaw_normalize_is_idempotent", yaw_normalize_is_idempotent),
];

fn rigid(b: &Box3D, theta: f64, tx: f64, ty: f64) -> Box3D {
    let (s, c) = theta.sin_cos();
    Box3D::new(
        c * b.x - s * b.y + tx,
        s * b.x + c * b.y + ty,
        b.z,
        b.l,
        b.w,
        b.h,
        b.yaw + theta,
    )
    .unwrap()
}

fn iou_is_symmetric() -> Result<(), String> {
    common::check(
        (common::box_near(0.0, 0.0, 3.0), common::box_near(0.0, 0.0, 3.0)),
        |(a, b)| {
            let (ab, ba) = (bev_iou(&a, &b), bev_iou(&b, &a));
            prop_assert!((ab - ba).abs() <= 1e-12, "{ab} vs {ba}");
            prop_assert!((0.0..=1.0).contains(&ab));
            Ok(())
        },
    )
}

fn iou_survives_rigid_motion() -> Result<(), String> {
    let boxes = (common::box_near(10.0, -5.0, 3.0), common::box_near(10.0, -5.0, 3.0));
    common::check(
        (boxes, common::angle(), -100.0..100.0f64, -100.0..100.0f64),
        |((a, b), theta, tx, ty)| {
            let before = bev_iou(&a, &b);
            let after = bev_iou(&rigid(&a, theta, tx, ty), &rigid(&b, theta, tx, ty));
            prop_assert!((before - after).abs() <= 1e-9, "{before} vs {after}");
            Ok(())
        },
    )
}

fn radial_velocity_is_linear_in_velocity() -> Result<(), String> {
    let v = || prop::array::uniform3(-30.0..30.0f64);
    let inputs = (
        prop::array::uniform3(-80.0..80.0f64),
        v(),
        v(),
        -3.0..3.0f64,
        prop::array::uniform3(-1.0..1.0f64),
    );
    common::check(inputs, |(pos, v1, v2, k, origin)| {
        prop_assume!((0..3).map(|i| (pos[i] - origin[i]).powi(2)).sum::<f64>() > 1.0);
        let at = |v: [f64; 3]| {
            radial_velocity(
                &KinematicState::from_pose(Pose::new(pos[0], pos[1], pos[2], 0.0), v),
                origin,
            )
            .unwrap()
        };
        let combined = at([v1[0] + k * v2[0], v1[1] + k * v2[1], v1[2] + k * v2[2]]);
        let separate = at(v1) + k * at(v2);
        prop_assert!(
            (combined - separate).abs() <= 1e-9 * (1.0 + separate.abs()),
            "{combined} vs {separate}"
        );
        Ok(())
    })
}

fn yaw_normalize_is_idempotent() -> Result<(), String> {
    common::check(-1e4..1e4f64, |theta| {
        let once = yaw_normalize(theta).unwrap();
        prop_assert_eq!(yaw_normalize(once).unwrap(), once);
        prop_assert!(once > -std::f64::consts::PI && once <= std::f64::consts::PI);
        Ok(())
    })
}
