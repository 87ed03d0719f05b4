//! Every backward kernel and the composed sparse backward against central differences.

mod common;

use common::fd::{self, TOL};
use common::{random_network, random_tiny_arch, tiny_residual_arch};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swat_core::SwatMode;

const CASES: u64 = 20;

fn check_cases(what: &str, case: impl Fn(u64) -> f64) {
    for c in 0..CASES {
        let e = case(c);
        assert!(e < TOL, "{what} case {c}: rel err {e:.3e}");
    }
}

#[test]
fn conv_backward_matches_finite_differences() {
    check_cases("conv", fd::conv_case);
}

#[test]
fn linear_backward_matches_finite_differences() {
    check_cases("linear", fd::linear_case);
}

#[test]
fn batchnorm_backward_matches_finite_differences() {
    check_cases("batchnorm", fd::batchnorm_case);
}

#[test]
fn relu_and_pool_backward_match_finite_differences() {
    check_cases("relu/pool", fd::relu_pool_case);
}

#[test]
fn softmax_cross_entropy_matches_finite_differences() {
    check_cases("softmax", fd::softmax_case);
}

#[test]
fn composed_sparse_backward_matches_finite_differences() {
    for case in 0..24 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + case);
        let arch = random_tiny_arch(&mut rng);
        let mut net = random_network(arch, case);
        let sparsity = [0.3, 0.5, 0.7][case as usize % 3];
        let e = fd::composed_case(&mut net, 900 + case, sparsity, SwatMode::FullSwat);
        assert!(e < TOL, "net {case} at sparsity {sparsity}: rel err {e:.3e}");
    }
}

#[test]
fn composed_backward_on_residual_network() {
    for case in 0..4 {
        let mut net = random_network(tiny_residual_arch(), 40 + case);
        let e = fd::composed_case(&mut net, 40 + case, 0.5, SwatMode::FullSwat);
        assert!(e < TOL, "residual {case} sparse: {e:.3e}");
        let mut net = random_network(tiny_residual_arch(), 40 + case);
        let e = fd::composed_case(&mut net, 40 + case, 0.0, SwatMode::Dense);
        assert!(e < TOL, "residual {case} dense: {e:.3e}");
    }
}

#[test]
fn dense_backward_matches_finite_differences() {
    for case in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + case);
        let arch = random_tiny_arch(&mut rng);
        let mut net = random_network(arch, case);
        let e = fd::composed_case(&mut net, 800 + case, 0.0, SwatMode::Dense);
        assert!(e < TOL, "dense net {case}: {e:.3e}");
    }
}
