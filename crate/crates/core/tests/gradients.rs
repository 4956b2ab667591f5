mod common;

use common::GRADIENT_SUITE;

const TOLERANCE: f64 = 1e-3;

fn check(name: &str) {
    let (_, f) = GRADIENT_SUITE.iter().find(|(n, _)| *n == name).unwrap();
    for seed in 0..3 {
        let err = f(seed);
        assert!(err < TOLERANCE, "{name} seed {seed}: relative error {err:.3e}");
    }
}

#[test]
fn sigmoid() {
    check("sigmoid");
}

#[test]
fn conv2d() {
    check("conv2d");
}

#[test]
fn matmul() {
    check("matmul");
}

#[test]
fn lif_surrogate() {
    check("lif_surrogate");
}

#[test]
fn amc_compose() {
    check("amc_compose");
}

#[test]
fn pfa_forward() {
    check("pfa_forward");
}

#[test]
fn cp_loss() {
    check("cp_loss");
}

#[test]
fn suite_covers_every_listed_op() {
    assert_eq!(GRADIENT_SUITE.len(), 7);
}
