//! Analytic MAC counts against instrumented loops that skip zero operands.

mod common;

use common::counters::{conv_layer_case, linear_layer_case};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swat_core::flops::{conv_forward_flops, linear_flops, training_flop_report, LinearPass};
use swat_core::plan::{plan_erk, plan_uniform};
use swat_core::{Architecture, BaselineConvention, PlanOptions, TopKScope};

#[test]
fn conv_counts_match_brute_force_on_random_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..25 {
        if let Err(e) = conv_layer_case(&mut rng) {
            panic!("case {case} {e}");
        }
    }
}

#[test]
fn linear_counts_match_brute_force_on_random_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..25 {
        if let Err(e) = linear_layer_case(&mut rng) {
            panic!("case {case} {e}");
        }
    }
}

#[test]
fn hand_examples() {
    assert_eq!(conv_forward_flops(1, 2, 6, 6, 2, 3, 3, 4, 4, 1.0), 576.0);
    assert_eq!(conv_forward_flops(1, 2, 6, 6, 2, 3, 3, 4, 4, 0.5), 288.0);
    assert_eq!(linear_flops(4, 10, 5, 0.2, 1.0, LinearPass::Forward), 40.0);
    assert_eq!(linear_flops(4, 10, 5, 1.0, 1.0, LinearPass::Backward), 400.0);
}

#[test]
fn reports_are_monotone_and_recover_dense() {
    for name in ["tiny-cnn", "resnet18-cifar"] {
        let arch = Architecture::by_name(name).unwrap();
        let infos = arch.layers().unwrap();
        let opts = PlanOptions::for_strategy(swat_core::PlanStrategy::Uniform, arch.dense_last);
        let mut last = -1.0;
        for s in [0.0, 0.2, 0.5, 0.8, 0.95] {
            let plan = plan_uniform(&infos, s, &opts).unwrap();
            let r = training_flop_report(&arch, &plan, TopKScope::Nchw, BaselineConvention::Dense).unwrap();
            if s == 0.0 {
                assert_eq!(r.training_flop_reduction, 0.0);
                assert_eq!(r.inference_flop_reduction, 0.0);
            }
            assert!(r.training_flop_reduction >= last);
            assert!((0.0..=100.0).contains(&r.training_flop_reduction));
            last = r.training_flop_reduction;
            let sum: f64 = r.layers.iter().map(|l| l.forward_macs).sum();
            assert_eq!(sum, r.forward_macs);
            for (l, d) in r.layers.iter().zip(&r.dense_layers) {
                assert!(l.forward_macs <= d.forward_macs && l.backward() <= d.backward());
            }
        }
    }
}

#[test]
fn backward_is_about_twice_forward() {
    let arch = Architecture::vgg16_cifar().unwrap();
    let infos = arch.layers().unwrap();
    let plan = plan_erk(&infos, 0.0, &PlanOptions::for_strategy(swat_core::PlanStrategy::Erk, false)).unwrap();
    let r = training_flop_report(&arch, &plan, TopKScope::Nchw, BaselineConvention::Dense).unwrap();
    let ratio = r.backward_macs / r.forward_macs;
    // only the first layer's input gradient is skipped
    assert!(ratio > 1.95 && ratio <= 2.0, "{ratio}");
}
