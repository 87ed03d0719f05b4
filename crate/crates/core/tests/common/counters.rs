//! Brute-force oracles: nonzero-MAC counting loops and exhaustive subset search.

use rand::Rng;
use swat_core::flops::{conv_forward_flops, conv_input_grad_flops, conv_weight_grad_flops, linear_flops, LinearPass};
use swat_core::layer::ConvSpec;
use swat_core::sparsify::{random_mask, sparsification_angle, topk_exact, topk_exact_masked};
use swat_core::{Shape4, Tensor4, TopKScope};

use super::random_tensor;

pub struct ConvCounts {
    pub forward: u64,
    pub input_grad: u64,
    pub weight_grad: u64,
}

/// Direct loops over a stride-1 unpadded convolution, its full transposed
/// convolution and its weight correlation, counting a MAC only when the
/// sparsified operand is nonzero.
pub fn brute_conv(x: &[f64], xs: Shape4, w: &[f64], ws: Shape4) -> ConvCounts {
    let (n, c, xh, xw) = (xs.n, xs.c, xs.h, xs.w);
    let (f, r, s) = (ws.n, ws.h, ws.w);
    let (h, wo) = (xh - r + 1, xw - s + 1);
    let wi = |f: usize, c: usize, i: usize, j: usize| ((f * ws.c + c) * r + i) * s + j;
    let xi = |b: usize, c: usize, i: usize, j: usize| ((b * xs.c + c) * xh + i) * xw + j;
    let mut counts = ConvCounts {
        forward: 0,
        input_grad: 0,
        weight_grad: 0,
    };
    for _b in 0..n {
        for fi in 0..f {
            for _oh in 0..h {
                for _ow in 0..wo {
                    for ci in 0..c {
                        for i in 0..r {
                            for j in 0..s {
                                if w[wi(fi, ci, i, j)] != 0.0 {
                                    counts.forward += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    // every input position gathers from the zero-padded output gradient through the rotated kernel
    for _b in 0..n {
        for ci in 0..c {
            for _ih in 0..xh {
                for _iw in 0..xw {
                    for fi in 0..f {
                        for i in 0..r {
                            for j in 0..s {
                                if w[wi(fi, ci, r - 1 - i, s - 1 - j)] != 0.0 {
                                    counts.input_grad += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    // every weight correlates its input channel with the output gradient over all input positions
    for _fi in 0..f {
        for ci in 0..c {
            for _i in 0..r {
                for _j in 0..s {
                    for b in 0..n {
                        for ih in 0..xh {
                            for iw in 0..xw {
                                if x[xi(b, ci, ih, iw)] != 0.0 {
                                    counts.weight_grad += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    counts
}

fn exact(analytic: f64, brute: u64, what: &str) -> Result<(), String> {
    if (analytic - brute as f64).abs() < 1e-6 {
        Ok(())
    } else {
        Err(format!("{what}: analytic {analytic} vs counted {brute}"))
    }
}

/// Random small conv layer with Top-K-realized densities; analytic counts must equal the loops.
pub fn conv_layer_case(rng: &mut impl Rng) -> Result<(), String> {
    let (c, f, r) = (rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=3));
    let xs = Shape4::new(rng.random_range(1..=2), c, rng.random_range(r..=6), rng.random_range(r..=6));
    let spec = ConvSpec::new(c, f, r, 1, 0);
    let (ws, wsp) = (spec.weight_shape(), rng.random_range(0.0..1.0));
    let (w, wrep) = topk_exact(&random_tensor(rng, ws), wsp, TopKScope::Nchw).unwrap();
    let asp = rng.random_range(0.0..1.0);
    let (x, xrep) = topk_exact(&random_tensor(rng, xs), asp, TopKScope::Nchw).unwrap();
    let (dw, da) = (1.0 - wrep.realized_sparsity, 1.0 - xrep.realized_sparsity);
    let (h, wo) = spec.output_hw(xs.h, xs.w).unwrap();
    let counts = brute_conv(x.data(), xs, w.data(), ws);
    let (n, x_h, x_w) = (xs.n, xs.h, xs.w);
    exact(conv_forward_flops(n, c, x_h, x_w, f, r, r, h, wo, dw), counts.forward, "forward")?;
    exact(conv_input_grad_flops(n, c, x_h, x_w, f, r, r, h, wo, dw), counts.input_grad, "input grad")?;
    exact(conv_weight_grad_flops(n, c, x_h, x_w, f, r, r, h, wo, da), counts.weight_grad, "weight grad")
}

/// Random small linear layer, forward and backward counts against a masked matmul counter.
pub fn linear_layer_case(rng: &mut impl Rng) -> Result<(), String> {
    let (n, x, y) = (rng.random_range(1..=5), rng.random_range(1..=12), rng.random_range(1..=8));
    let wsp = rng.random_range(0.0..1.0);
    let (w, wrep) = topk_exact(&random_tensor(rng, Shape4::matrix(x, y)), wsp, TopKScope::Nchw).unwrap();
    let asp = rng.random_range(0.0..1.0);
    let (a, arep) = topk_exact(&random_tensor(rng, Shape4::matrix(n, x)), asp, TopKScope::Nchw).unwrap();
    let (dw, da) = (1.0 - wrep.realized_sparsity, 1.0 - arep.realized_sparsity);
    let (mut fwd, mut ig, mut wg) = (0u64, 0u64, 0u64);
    for b in 0..n {
        for i in 0..x {
            for j in 0..y {
                // forward and input gradient multiply by the weight, weight gradient by the activation
                if w.data()[i * y + j] != 0.0 {
                    fwd += 1;
                    ig += 1;
                }
                if a.data()[b * x + i] != 0.0 {
                    wg += 1;
                }
            }
        }
    }
    exact(linear_flops(n, x, y, dw, da, LinearPass::Forward), fwd, "forward")?;
    exact(linear_flops(n, x, y, dw, da, LinearPass::Backward), ig + wg, "backward")
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Best retained norm over all `k`-subsets of `v`, enumerated as bitmasks.
pub fn best_subset_norm(v: &[f64], k: usize) -> f64 {
    let d = v.len();
    let mut best = 0.0f64;
    for bits in 0u32..(1 << d) {
        if bits.count_ones() as usize != k {
            continue;
        }
        let sq: f64 = (0..d).filter(|i| bits & (1 << i) != 0).map(|i| v[i] * v[i]).sum();
        best = best.max(sq);
    }
    best.sqrt()
}

/// One random vector of dimension at most 12: for every `k`, Top-K keeps the best
/// subset norm and a random `k`-mask never deviates less.
pub fn topk_optimality_case(rng: &mut impl Rng) -> Result<(), String> {
    let d = rng.random_range(1..=12);
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let t = Tensor4::from_vec(Shape4::new(1, 1, 1, d), v.clone()).unwrap();
    let vn = norm(&v);
    for k in 1..=d {
        let s = 1.0 - k as f64 / d as f64;
        let top = topk_exact_masked(&t, s, TopKScope::Nchw).unwrap();
        if top.report.kept_count != k {
            return Err(format!("d={d} k={k}: kept {}", top.report.kept_count));
        }
        let kept = norm(top.tensor.data());
        let best = best_subset_norm(&v, k);
        if kept < best * (1.0 - 1e-12) || kept > vn * (1.0 + 1e-12) {
            return Err(format!("d={d} k={k}: kept norm {kept}, best {best}"));
        }
        let top_angle = sparsification_angle(&v, top.tensor.data()).unwrap();
        let r = random_mask(&t, s, rng.random()).unwrap();
        let rand_angle = sparsification_angle(&v, r.data()).unwrap();
        if rand_angle < top_angle - 1e-12 {
            return Err(format!("d={d} k={k}: random angle {rand_angle} < top-k angle {top_angle}"));
        }
    }
    Ok(())
}
