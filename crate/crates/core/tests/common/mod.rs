#![allow(dead_code)]

pub mod counters;
pub mod fd;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swat_core::arch::{ArchNode, Architecture};
use swat_core::layer::{BatchNormSpec, ConvSpec, LayerSpec, LinearSpec, PoolSpec};
use swat_core::ops::{
    avgpool_forward, batchnorm_forward, conv_forward, linear_forward, maxpool_forward, relu_forward,
    softmax_cross_entropy, BnMode, RunningStats,
};
use swat_core::{Network, Shape4, Tensor4};

/// Extra term added to a weighted layer's output: `op(input, delta)` without bias.
pub struct Inject<'a> {
    pub layer: usize,
    pub input: &'a Tensor4<f64>,
    pub delta: &'a Tensor4<f64>,
}

/// Straightforward forward pass over the architecture tree using the given
/// parameters, batch statistics for BN and no sparsification.
pub fn reference_forward(
    arch: &Architecture,
    params: &[Vec<Tensor4<f64>>],
    x: &Tensor4<f64>,
    inject: Option<&Inject<'_>>,
) -> Tensor4<f64> {
    let mut id = 0;
    walk(&arch.nodes, params, x.clone(), inject, &mut id)
}

fn walk(
    nodes: &[ArchNode],
    params: &[Vec<Tensor4<f64>>],
    mut x: Tensor4<f64>,
    inject: Option<&Inject<'_>>,
    id: &mut usize,
) -> Tensor4<f64> {
    for node in nodes {
        x = match node {
            ArchNode::Layer(spec) => {
                let y = apply(spec, &params[*id], &x, inject.filter(|i| i.layer == *id));
                *id += 1;
                y
            }
            ArchNode::Residual { main, shortcut } => {
                let mut a = walk(main, params, x.clone(), inject, id);
                let b = walk(shortcut, params, x, inject, id);
                a.add_assign(&b).unwrap();
                a
            }
        };
    }
    x
}

fn apply(spec: &LayerSpec, p: &[Tensor4<f64>], x: &Tensor4<f64>, inject: Option<&Inject<'_>>) -> Tensor4<f64> {
    let bias = p.get(1).map(|b| b.data());
    let mut y = match spec {
        LayerSpec::Conv(c) => conv_forward(x, &p[0], bias, c).unwrap(),
        LayerSpec::Linear(_) => linear_forward(x, &p[0], bias).unwrap(),
        LayerSpec::BatchNorm(b) => {
            let mut rs = RunningStats::new(b.channels);
            batchnorm_forward(x, p[0].data(), p[1].data(), &mut rs, b.eps, b.momentum, BnMode::Train)
                .unwrap()
                .0
        }
        LayerSpec::Relu => relu_forward(x),
        LayerSpec::MaxPool(ps) => maxpool_forward(x, ps).unwrap().0,
        LayerSpec::AvgPool(ps) => avgpool_forward(x, ps).unwrap(),
        LayerSpec::Flatten => x.clone().reshape(Shape4::matrix(x.shape().n, x.shape().sample_len())).unwrap(),
    };
    if let Some(inj) = inject {
        let extra = match spec {
            LayerSpec::Conv(c) => conv_forward(inj.input, inj.delta, None, c).unwrap(),
            LayerSpec::Linear(_) => linear_forward(inj.input, inj.delta, None).unwrap(),
            _ => panic!("injection into a parameter-free layer"),
        };
        y.add_assign(&extra).unwrap();
    }
    y
}

pub fn loss(logits: &Tensor4<f64>, targets: &[usize]) -> f64 {
    softmax_cross_entropy(logits, targets, 0.0).unwrap().0
}

pub fn random_tensor(rng: &mut impl Rng, shape: Shape4) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-6)`; the floor absorbs difference noise on
/// gradients that vanish analytically.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-6)
}

/// Central differences of `f` around `x`, one coordinate at a time.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = v[i];
            v[i] = orig + h;
            let up = f(&v);
            v[i] = orig - h;
            let down = f(&v);
            v[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Small random sequential CNN: one or two conv blocks (optional BN, ReLU,
/// pooling), flatten, one or two linear layers.
pub fn random_tiny_arch(rng: &mut impl Rng) -> Architecture {
    let c0 = rng.random_range(1..=2);
    let hw = rng.random_range(5..=7);
    let mut nodes = Vec::new();
    let (mut c, mut h) = (c0, hw);
    for _ in 0..rng.random_range(1..=2) {
        let f = rng.random_range(2..=3);
        let k = if rng.random_bool(0.5) { 3 } else { 2 };
        let pad = if k == 3 { 1 } else { 0 };
        let with_bn = rng.random_bool(0.6);
        let mut spec = ConvSpec::new(c, f, k, 1, pad);
        // a sparse filter over a zero patch yields an exact 0 at the ReLU kink,
        // where one-sided differences are meaningless; a bias moves it off the kink.
        // Under BN a bias has an identically zero gradient, so it is left out there.
        if !with_bn {
            spec = spec.with_bias();
        }
        nodes.push(ArchNode::Layer(LayerSpec::Conv(spec)));
        h = spec.output_hw(h, h).unwrap().0;
        c = f;
        if with_bn {
            nodes.push(ArchNode::Layer(LayerSpec::BatchNorm(BatchNormSpec::new(c))));
        }
        nodes.push(ArchNode::Layer(LayerSpec::Relu));
        if h >= 4 && rng.random_bool(0.5) {
            let pool = PoolSpec::new(2, 2);
            nodes.push(ArchNode::Layer(if rng.random_bool(0.5) {
                LayerSpec::MaxPool(pool)
            } else {
                LayerSpec::AvgPool(pool)
            }));
            h = pool.output_hw(h, h).unwrap().0;
        }
    }
    nodes.push(ArchNode::Layer(LayerSpec::Flatten));
    let classes = rng.random_range(2..=4);
    let mut x = c * h * h;
    if rng.random_bool(0.5) {
        let hidden = rng.random_range(3..=6);
        nodes.push(ArchNode::Layer(LayerSpec::Linear(LinearSpec {
            inputs: x,
            outputs: hidden,
            bias: true,
        })));
        nodes.push(ArchNode::Layer(LayerSpec::Relu));
        x = hidden;
    }
    nodes.push(ArchNode::Layer(LayerSpec::Linear(LinearSpec {
        inputs: x,
        outputs: classes,
        bias: true,
    })));
    Architecture::new("random-tiny", Shape4::new(1, c0, hw, hw), classes, nodes).unwrap()
}

/// Tiny residual network: conv stem, one identity block and one projection block.
pub fn tiny_residual_arch() -> Architecture {
    let conv = |c, f, k, s, p| ArchNode::Layer(LayerSpec::Conv(ConvSpec::new(c, f, k, s, p)));
    let bn = |c| ArchNode::Layer(LayerSpec::BatchNorm(BatchNormSpec::new(c)));
    let relu = || ArchNode::Layer(LayerSpec::Relu);
    let nodes = vec![
        conv(2, 3, 3, 1, 1),
        bn(3),
        relu(),
        ArchNode::Residual {
            main: vec![conv(3, 3, 3, 1, 1), bn(3), relu(), conv(3, 3, 3, 1, 1), bn(3)],
            shortcut: vec![],
        },
        relu(),
        ArchNode::Residual {
            main: vec![conv(3, 4, 3, 2, 1), bn(4), relu(), conv(4, 4, 3, 1, 1), bn(4)],
            shortcut: vec![conv(3, 4, 1, 2, 0), bn(4)],
        },
        relu(),
        ArchNode::Layer(LayerSpec::AvgPool(PoolSpec::new(3, 3))),
        ArchNode::Layer(LayerSpec::Flatten),
        ArchNode::Layer(LayerSpec::Linear(LinearSpec {
            inputs: 4,
            outputs: 3,
            bias: true,
        })),
    ];
    Architecture::new("tiny-residual", Shape4::new(1, 2, 6, 6), 3, nodes).unwrap()
}

/// Random network with randomized BN affine parameters, so gradients through them are generic.
pub fn random_network(arch: Architecture, seed: u64) -> Network<f64> {
    let mut net = Network::<f64>::from_arch(arch, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for l in net.layers_mut() {
        if matches!(l.spec(), LayerSpec::BatchNorm(_)) {
            for v in l.params[0].data_mut() {
                *v = rng.random_range(0.5..1.5);
            }
            for v in l.params[1].data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        if l.spec().is_sparsifiable() && l.params.len() > 1 {
            for v in l.params[1].data_mut() {
                *v = rng.random_range(-0.2..0.2);
            }
        }
    }
    net
}

pub fn input_batch(rng: &mut impl Rng, arch: &Architecture, n: usize) -> (Tensor4<f64>, Vec<usize>) {
    let s = arch.input;
    let x = random_tensor(rng, Shape4::new(n, s.c, s.h, s.w));
    let y = (0..n).map(|_| rng.random_range(0..arch.classes)).collect();
    (x, y)
}
