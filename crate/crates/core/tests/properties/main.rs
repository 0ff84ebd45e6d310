//! Invariant suites, 1000 generated cases per property from a fixed seed.

#[path = "../common/mod.rs"]
mod common;

mod association;
mod fusion;
mod geometry;
mod metrics;
mod motion;
mod sim;
mod tracking;

fn run(suite: &[common::Property]) {
    if let Err(e) = common::run_suite(suite) {
        panic!("{e}");
    }
}

#[test]
fn geometry_invariants() {
    run(geometry::SUITE);
}

#[test]
fn fusion_invariants() {
    run(fusion::SUITE);
}

#[test]
fn motion_invariants() {
    run(motion::SUITE);
}

#[test]
fn association_invariants() {
    run(association::SUITE);
}

#[test]
fn tracking_invariants() {
    run(tracking::SUITE);
}

#[test]
fn sim_invariants() {
    run(sim::SUITE);
}

#[test]
fn metrics_invariants() {
    run(metrics::SUITE);
}
