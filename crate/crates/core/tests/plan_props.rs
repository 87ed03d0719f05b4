use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swat_core::arch::{ArchNode, Architecture, LayerInfo};
use swat_core::layer::{BatchNormSpec, ConvSpec, LayerSpec, LinearSpec};
use swat_core::plan::{erk_score, plan_erk, plan_momentum, plan_uniform};
use swat_core::{PlanOptions, PlanStrategy, Shape4, SparsityPlan};

/// Conv-BN-ReLU stack with the given widths on 4x4 inputs, then a linear head.
fn stack(widths: &[usize], kernel: usize) -> Vec<LayerInfo> {
    let mut nodes = Vec::new();
    let mut c = 3;
    for &f in widths {
        nodes.push(ArchNode::Layer(LayerSpec::Conv(ConvSpec::new(c, f, kernel, 1, kernel / 2))));
        nodes.push(ArchNode::Layer(LayerSpec::BatchNorm(BatchNormSpec::new(f))));
        nodes.push(ArchNode::Layer(LayerSpec::Relu));
        c = f;
    }
    nodes.push(ArchNode::Layer(LayerSpec::Flatten));
    nodes.push(ArchNode::Layer(LayerSpec::Linear(LinearSpec {
        inputs: c * 16,
        outputs: 10,
        bias: true,
    })));
    Architecture::new("stack", Shape4::new(1, 3, 4, 4), 10, nodes)
        .unwrap()
        .layers()
        .unwrap()
}

/// Independent 3x3 conv layers with the given `(channels, filters)`, shapes not chained.
fn conv_layers(dims: &[(usize, usize)]) -> Vec<LayerInfo> {
    dims.iter()
        .enumerate()
        .map(|(id, &(c, f))| LayerInfo {
            id,
            spec: LayerSpec::Conv(ConvSpec::new(c, f, 3, 1, 1)),
            input: Shape4::new(1, c, 8, 8),
            output: Shape4::new(1, f, 8, 8),
            reads_network_input: id == 0,
        })
        .collect()
}

fn check_invariants(plan: &SparsityPlan, layers: &[LayerInfo]) {
    assert_eq!(plan.entries.len(), layers.len());
    for (e, l) in plan.entries.iter().zip(layers) {
        assert_eq!(e.layer_id, l.id);
        assert_eq!(e.weight_sparsity, e.activation_sparsity);
        assert!((0.0..=1.0).contains(&e.weight_sparsity));
        if e.exempt {
            assert_eq!(e.weight_sparsity, 0.0);
        }
        if !l.spec.is_sparsifiable() {
            assert!(e.exempt);
        }
    }
}

fn weighted_avg(plan: &SparsityPlan) -> f64 {
    plan.network_average_sparsity().0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn erk_meets_target_and_invariants(widths in prop::collection::vec(1usize..48, 1..6), target in 0.0f64..0.9, first in any::<bool>()) {
        let layers = stack(&widths, 3);
        let opts = PlanOptions { exempt_first: first, exempt_last: false, min_density: 0.0 };
        match plan_erk(&layers, target, &opts) {
            Ok(plan) => {
                check_invariants(&plan, &layers);
                prop_assert!((weighted_avg(&plan) - target).abs() <= 0.005, "{} vs {}", weighted_avg(&plan), target);
            }
            // only the first-layer exemption can make a target unreachable
            Err(_) => prop_assert!(first),
        }
    }

    #[test]
    fn erk_orders_sparsity_by_layer_score(
        dims in prop::collection::vec((1usize..64, 1usize..64), 2..6),
        target in 0.0f64..0.9,
    ) {
        let layers = conv_layers(&dims);
        let opts = PlanOptions { exempt_first: false, exempt_last: false, min_density: 0.0 };
        let plan = plan_erk(&layers, target, &opts).unwrap();
        for a in &layers {
            for b in &layers {
                // a lower score means more parameters per dimension: at least as sparse
                if erk_score(&a.spec) < erk_score(&b.spec) {
                    prop_assert!(plan.entries[a.id].weight_sparsity >= plan.entries[b.id].weight_sparsity - 1e-12);
                }
            }
        }
    }

    #[test]
    fn momentum_meets_target(widths in prop::collection::vec(2usize..32, 2..5), target in 0.0f64..0.9, seed in any::<u64>()) {
        let layers = stack(&widths, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bufs: Vec<Option<Vec<f64>>> = layers
            .iter()
            .map(|l| l.spec.is_sparsifiable().then(|| {
                let scale: f64 = rng.random_range(0.01..2.0);
                (0..l.spec.weight_count()).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
            }))
            .collect();
        let masks: Vec<Option<&[bool]>> = vec![None; layers.len()];
        let momentum: Vec<Option<&[f64]>> = bufs.iter().map(|b| b.as_deref()).collect();
        let opts = PlanOptions::for_strategy(PlanStrategy::Momentum, false);
        let plan = plan_momentum(&layers, target, &momentum, &masks, &opts).unwrap();
        check_invariants(&plan, &layers);
        prop_assert!((weighted_avg(&plan) - target).abs() <= 0.005);
        for e in plan.entries.iter().filter(|e| !e.exempt) {
            prop_assert!(1.0 - e.weight_sparsity >= 0.02 - 1e-12);
        }
    }

    #[test]
    fn uniform_is_exact_and_idempotent(widths in prop::collection::vec(1usize..32, 1..6), target in 0.0f64..=1.0) {
        let layers = stack(&widths, 1);
        let opts = PlanOptions::for_strategy(PlanStrategy::Uniform, false);
        let a = plan_uniform(&layers, target, &opts).unwrap();
        let b = plan_uniform(&layers, target, &opts).unwrap();
        prop_assert_eq!(&a, &b);
        check_invariants(&a, &layers);
        prop_assert!(a.entries[0].exempt);
        for e in a.entries.iter().filter(|e| !e.exempt) {
            prop_assert_eq!(e.weight_sparsity, target);
        }
    }
}

#[test]
fn erk_weight_and_activation_averages_diverge_on_vgg() {
    let arch = Architecture::vgg16_cifar().unwrap();
    let layers = arch.layers().unwrap();
    let plan = plan_erk(&layers, 0.9, &PlanOptions::for_strategy(PlanStrategy::Erk, false)).unwrap();
    let (w, a) = plan.network_average_sparsity();
    assert!((w - 0.9).abs() < 0.005);
    // large late layers take most of the sparsity while early layers hold most activations
    assert!(a < w - 0.1, "weight {w} activation {a}");
}
