mod common;

use common::props::SUITES;

const CASES: u32 = 1000;

fn check(name: &str) {
    let (_, suite) = SUITES.iter().find(|(n, _)| *n == name).unwrap();
    if let Err(e) = suite(CASES) {
        panic!("{name}: {e}");
    }
}

#[test]
fn belief_stays_normalized() {
    check("belief normalization");
}

#[test]
fn network_stays_physical() {
    check("network physicality");
}

#[test]
fn episodes_are_deterministic() {
    check("episode determinism");
}

#[test]
fn bellman_operators_contract() {
    check("bellman contraction");
}

#[test]
fn fusion_is_convex() {
    check("fusion convexity");
}

#[test]
fn kl_is_nonnegative() {
    check("kl non-negativity");
}

#[test]
fn gnn_is_permutation_equivariant() {
    check("permutation equivariance");
}
