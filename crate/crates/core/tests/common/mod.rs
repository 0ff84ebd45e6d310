#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, RngSeed, TestCaseError};
use radtrack::geometry::Box3D;

pub const CASES: u32 = 1000;
pub const MASTER_SEED: u64 = 0x7261_6474_7261_636b;

pub fn config() -> Config {
    Config {
        cases: CASES,
        rng_algorithm: RngAlgorithm::ChaCha,
        rng_seed: RngSeed::Fixed(MASTER_SEED),
        failure_persistence: None,
        ..Config::default()
    }
}

pub fn angle() -> impl Strategy<Value = f64> {
    -std::f64::consts::PI..std::f64::consts::PI
}

/// Car-sized boxes centered near `(cx, cy)`.
pub fn box_near(cx: f64, cy: f64, spread: f64) -> impl Strategy<Value = Box3D> {
    (
        -spread..spread,
        -spread..spread,
        -1.0..1.0f64,
        0.5..6.0f64,
        0.5..3.0f64,
        0.5..3.0f64,
        angle(),
    )
        .prop_map(move |(dx, dy, z, l, w, h, yaw)| Box3D::new(cx + dx, cy + dy, z, l, w, h, yaw).unwrap())
}

/// Exhaustive minimum over all one-to-one assignments covering the smaller side.
pub fn brute_force_min(cost: &nalgebra::DMatrix<f64>) -> f64 {
    let (r, c) = cost.shape();
    if r > c {
        return brute_force_min(&cost.transpose());
    }
    fn go(cost: &nalgebra::DMatrix<f64>, row: usize, used: &mut Vec<bool>) -> f64 {
        if row == cost.nrows() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for col in 0..cost.ncols() {
            if !used[col] {
                used[col] = true;
                best = best.min(cost[(row, col)] + go(cost, row + 1, used));
                used[col] = false;
            }
        }
        best
    }
    go(cost, 0, &mut vec![false; c])
}

/// Integer-valued cost matrices so that sums are exact in `f64`.
pub fn integer_matrix(max_dim: usize) -> impl Strategy<Value = nalgebra::DMatrix<f64>> {
    (1..=max_dim, 1..=max_dim).prop_flat_map(|(r, c)| {
        prop::collection::vec(0i32..100, r * c)
            .prop_map(move |v| nalgebra::DMatrix::from_iterator(r, c, v.into_iter().map(f64::from)))
    })
}

/// Car-like boxes: overlapping copies stay above the clustering IoU threshold.
pub fn car_near(cx: f64, cy: f64, spread: f64) -> impl Strategy<Value = Box3D> {
    (
        -spread..spread,
        -spread..spread,
        0.0..1.0f64,
        4.0..5.0f64,
        1.8..2.2f64,
        1.4..1.8f64,
        angle(),
    )
        .prop_map(move |(dx, dy, z, l, w, h, yaw)| Box3D::new(cx + dx, cy + dy, z, l, w, h, yaw).unwrap())
}

pub type Property = (&'static str, fn() -> Result<(), String>);

/// Runs `test` over `CASES` inputs drawn from `strategy` with the fixed seed.
pub fn check<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    proptest::test_runner::TestRunner::new(config())
        .run(&strategy, test)
        .map_err(|e| e.to_string())
}

/// Runs every property of a suite, collecting all failures.
pub fn run_suite(suite: &[Property]) -> Result<(), String> {
    let failures: Vec<String> = suite
        .iter()
        .filter_map(|(name, f)| f().err().map(|e| format!("{name}: {e}")))
        .collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(failures.join("\n"))
    }
}
