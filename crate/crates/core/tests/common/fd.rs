//! Central-difference oracles for every backward kernel and for the composed
//! sparse backward. Each check returns the worst relative error over its cases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swat_core::engine::{backward_pass, forward_pass, PassOptions};
use swat_core::layer::{ConvSpec, PoolSpec};
use swat_core::ops::*;
use swat_core::plan::plan_uniform;
use swat_core::sparsify::topk_exact_masked;
use swat_core::{Network, PlanOptions, SavedContext, Shape4, SwatMode, Tensor4, ThresholdCache, TopKScope};

use super::{input_batch, loss, numeric_grad, reference_forward, rel_err, random_tensor, Inject};

pub const H: f64 = 1e-6;
pub const TOL: f64 = 1e-5;

fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn with(shape: Shape4, v: &[f64]) -> Tensor4<f64> {
    Tensor4::from_vec(shape, v.to_vec()).unwrap()
}

pub fn conv_case(case: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(case);
    let c = rng.random_range(1..=3);
    let f = rng.random_range(1..=3);
    let k = rng.random_range(1..=3);
    let stride = rng.random_range(1..=2);
    let pad = rng.random_range(0..=1);
    let spec = ConvSpec::new(c, f, k, stride, pad).with_bias();
    let xs = Shape4::new(rng.random_range(1..=2), c, rng.random_range(k..=5), rng.random_range(k..=5));
    let x = random_tensor(&mut rng, xs);
    let w = random_tensor(&mut rng, spec.weight_shape());
    let b: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r = random_tensor(&mut rng, conv_output_shape(xs, &spec).unwrap());

    let gx = conv_backward_input(&r, &w, &spec, xs).unwrap();
    let gw = conv_backward_weight(&r, &x, &spec).unwrap();
    let gb = conv_backward_bias(&r);
    let nx = numeric_grad(x.data(), H, |v| dot(&r, &conv_forward(&with(xs, v), &w, Some(&b), &spec).unwrap()));
    let nw = numeric_grad(w.data(), H, |v| {
        dot(&r, &conv_forward(&x, &with(w.shape(), v), Some(&b), &spec).unwrap())
    });
    let nb = numeric_grad(&b, H, |v| dot(&r, &conv_forward(&x, &w, Some(v), &spec).unwrap()));
    rel_err(gx.data(), &nx).max(rel_err(gw.data(), &nw)).max(rel_err(&gb, &nb))
}

pub fn linear_case(case: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(100 + case);
    let (n, xdim, y) = (rng.random_range(1..=4), rng.random_range(1..=6), rng.random_range(1..=5));
    let xs = Shape4::matrix(n, xdim);
    let x = random_tensor(&mut rng, xs);
    let w = random_tensor(&mut rng, Shape4::matrix(xdim, y));
    let b: Vec<f64> = (0..y).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r = random_tensor(&mut rng, Shape4::matrix(n, y));
    let g = linear_backward(&r, &x, &w).unwrap();
    let nx = numeric_grad(x.data(), H, |v| dot(&r, &linear_forward(&with(xs, v), &w, Some(&b)).unwrap()));
    let nw = numeric_grad(w.data(), H, |v| dot(&r, &linear_forward(&x, &with(w.shape(), v), Some(&b)).unwrap()));
    let nb = numeric_grad(&b, H, |v| dot(&r, &linear_forward(&x, &w, Some(v)).unwrap()));
    rel_err(g.input.data(), &nx).max(rel_err(g.weight.data(), &nw)).max(rel_err(&g.bias, &nb))
}

pub fn batchnorm_case(case: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(200 + case);
    let xs = Shape4::new(rng.random_range(2..=3), rng.random_range(1..=3), rng.random_range(1..=3), 2);
    let c = xs.c;
    let x = random_tensor(&mut rng, xs);
    let gamma: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..1.5)).collect();
    let beta: Vec<f64> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
    let r = random_tensor(&mut rng, xs);
    let fwd = |x: &Tensor4<f64>, g: &[f64], b: &[f64]| {
        let mut rs = RunningStats::new(c);
        batchnorm_forward(x, g, b, &mut rs, 1e-5, 0.1, BnMode::Train).unwrap()
    };
    let (_, saved) = fwd(&x, &gamma, &beta);
    let g = batchnorm_backward(&r, &saved).unwrap();
    let nx = numeric_grad(x.data(), H, |v| dot(&r, &fwd(&with(xs, v), &gamma, &beta).0));
    let ng = numeric_grad(&gamma, H, |v| dot(&r, &fwd(&x, v, &beta).0));
    let nb = numeric_grad(&beta, H, |v| dot(&r, &fwd(&x, &gamma, v).0));
    rel_err(g.input.data(), &nx).max(rel_err(&g.gamma, &ng)).max(rel_err(&g.beta, &nb))
}

/// ReLU, max pooling and average pooling on one input.
pub fn relu_pool_case(case: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(300 + case);
    let xs = Shape4::new(2, rng.random_range(1..=2), 4, 4);
    // keep values away from the ReLU kink and from pooling ties
    let x = Tensor4::from_fn(xs, |_| {
        let v: f64 = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    });
    let p = PoolSpec::new(2, 2);

    let r = random_tensor(&mut rng, xs);
    let y = relu_forward(&x);
    let g = relu_backward(&r, &y).unwrap();
    let n = numeric_grad(x.data(), H, |v| dot(&r, &relu_forward(&with(xs, v))));
    let mut worst = rel_err(g.data(), &n);

    let (y, argmax) = maxpool_forward(&x, &p).unwrap();
    let r = random_tensor(&mut rng, y.shape());
    let g = maxpool_backward(&r, &argmax, xs);
    let n = numeric_grad(x.data(), H, |v| dot(&r, &maxpool_forward(&with(xs, v), &p).unwrap().0));
    worst = worst.max(rel_err(g.data(), &n));

    let r = random_tensor(&mut rng, avgpool_forward(&x, &p).unwrap().shape());
    let g = avgpool_backward(&r, &p, xs).unwrap();
    let n = numeric_grad(x.data(), H, |v| dot(&r, &avgpool_forward(&with(xs, v), &p).unwrap()));
    worst.max(rel_err(g.data(), &n))
}

pub fn softmax_case(case: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(400 + case);
    let (n, y) = (rng.random_range(1..=4), rng.random_range(2..=6));
    let s = Shape4::matrix(n, y);
    let logits = random_tensor(&mut rng, s);
    let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..y)).collect();
    let ls = if case % 2 == 0 { 0.0 } else { 0.1 };
    let (_, g) = softmax_cross_entropy(&logits, &targets, ls).unwrap();
    let num = numeric_grad(logits.data(), H, |v| softmax_cross_entropy(&with(s, v), &targets, ls).unwrap().0);
    rel_err(g.data(), &num)
}

/// Worst error of the engine's gradients against the loss of the sparse-weight forward.
///
/// Weight masks are frozen. The weight gradient of layer `l` consumes the saved
/// (sparsified) input, so the oracle perturbs `l`'s output by `op(saved input, Δ)`
/// and differentiates with respect to `Δ` at 0. Biases and BN affine parameters are
/// perturbed directly. A forward pass that disagrees with the reference walk
/// counts as an infinite error.
pub fn composed_case(net: &mut Network<f64>, seed: u64, sparsity: f64, mode: SwatMode) -> f64 {
    let arch = net.arch().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, y) = input_batch(&mut rng, &arch, 3);
    let infos = net.infos();
    let opts = PlanOptions {
        exempt_first: false,
        exempt_last: false,
        min_density: 0.0,
    };
    let plan = plan_uniform(&infos, sparsity, &opts).unwrap();

    let masks: Vec<Option<Vec<bool>>> = net
        .layers()
        .iter()
        .map(|l| {
            l.weight()
                .map(|w| topk_exact_masked(w, sparsity, TopKScope::Nchw).unwrap().mask)
        })
        .collect();
    let mut sparse_params: Vec<Vec<Tensor4<f64>>> = net.layers().iter().map(|l| l.params.clone()).collect();
    if mode != SwatMode::Dense {
        for (p, m) in sparse_params.iter_mut().zip(&masks) {
            if let Some(m) = m {
                for (v, &keep) in p[0].data_mut().iter_mut().zip(m) {
                    if !keep {
                        *v = 0.0;
                    }
                }
            }
        }
    }

    let mut cache = ThresholdCache::new(1).unwrap();
    let popts = PassOptions {
        frozen_masks: Some(&masks),
        ..PassOptions::train(mode, TopKScope::Nchw, 0)
    };
    let out = forward_pass(net, &x, &plan, &mut cache, &popts).unwrap();
    let reference = reference_forward(&arch, &sparse_params, &x, None);
    if rel_err(out.logits.data(), reference.data()) >= 1e-12 {
        return f64::INFINITY;
    }

    let saved_inputs: Vec<Option<Tensor4<f64>>> = net
        .layers()
        .iter()
        .map(|l| match l.saved() {
            Some(SavedContext::Weighted { input, .. }) => Some(input.clone()),
            _ => None,
        })
        .collect();
    let (_, logit_grad) = softmax_cross_entropy(&out.logits, &y, 0.0).unwrap();
    let grads = backward_pass(net, &logit_grad).unwrap();

    let mut worst = 0.0f64;
    for (id, info) in infos.iter().enumerate() {
        for k in 0..sparse_params[id].len() {
            let analytic = grads.params[id][k].data();
            let numeric = if k == 0 && info.spec.is_sparsifiable() {
                let input = saved_inputs[id].as_ref().unwrap();
                let shape = sparse_params[id][0].shape();
                numeric_grad(&vec![0.0; shape.len()], H, |v| {
                    let delta = with(shape, v);
                    let inj = Inject {
                        layer: id,
                        input,
                        delta: &delta,
                    };
                    loss(&reference_forward(&arch, &sparse_params, &x, Some(&inj)), &y)
                })
            } else {
                let base = sparse_params[id][k].clone();
                let mut p = sparse_params.clone();
                numeric_grad(base.data(), H, |v| {
                    p[id][k] = with(base.shape(), v);
                    loss(&reference_forward(&arch, &p, &x, None), &y)
                })
            };
            worst = worst.max(rel_err(analytic, &numeric));
        }
    }
    worst
}
