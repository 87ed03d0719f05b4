//! Batch normalization over `(N, H, W)` per channel. Never sparsified.

use crate::error::{Result, SwatError};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running mean / variance tracked across training batches.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// Values saved by the forward pass for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BnSaved<T> {
    /// Normalized input `x̂`.
    pub normalized: Tensor4<T>,
    /// `1 / sqrt(var + eps)` per channel.
    pub inv_std: Vec<T>,
    pub gamma: Vec<T>,
    pub mode: BnMode,
}

/// Gradients produced by [`batchnorm_backward`].
#[derive(Debug, Clone)]
pub struct BnGrads<T> {
    pub input: Tensor4<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Per-channel normalization. In `Train` mode uses batch statistics and updates
/// `running` with `momentum` (unbiased variance, as mainstream frameworks do);
/// in `Eval` mode uses `running`.
pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    running: &mut RunningStats<T>,
    eps: f64,
    momentum: f64,
    mode: BnMode,
) -> Result<(Tensor4<T>, BnSaved<T>)> {
    let s = input.shape();
    for (name, len) in [
        ("batchnorm gamma", gamma.len()),
        ("batchnorm beta", beta.len()),
        ("batchnorm running mean", running.mean.len()),
        ("batchnorm running var", running.var.len()),
    ] {
        if len != s.c {
            return Err(SwatError::LengthMismatch {
                op: name,
                expected: s.c,
                actual: len,
            });
        }
    }
    let plane = s.plane();
    let count = s.n * plane;
    let data = input.data();
    let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
        BnMode::Train => (0..s.c)
            .map(|c| {
                let mut sum = 0.0;
                for n in 0..s.n {
                    let off = (n * s.c + c) * plane;
                    sum += data[off..off + plane].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut sq = 0.0;
                for n in 0..s.n {
                    let off = (n * s.c + c) * plane;
                    sq += data[off..off + plane]
                        .iter()
                        .map(|v| {
                            let d = v.as_f64() - mean;
                            d * d
                        })
                        .sum::<f64>();
                }
                (mean, sq / count as f64)
            })
            .unzip(),
        BnMode::Eval => (
            running.mean.iter().map(|v| v.as_f64()).collect(),
            running.var.iter().map(|v| v.as_f64()).collect(),
        ),
    };
    if mode == BnMode::Train {
        let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
        for c in 0..s.c {
            let rm = running.mean[c].as_f64();
            let rv = running.var[c].as_f64();
            running.mean[c] = T::of_f64((1.0 - momentum) * rm + momentum * mean[c]);
            running.var[c] = T::of_f64((1.0 - momentum) * rv + momentum * var[c] * unbias);
        }
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::of_f64(1.0 / (v + eps).sqrt())).collect();
    let mean_t: Vec<T> = mean.iter().map(|&m| T::of_f64(m)).collect();
    let mut normalized = Tensor4::zeros(s);
    let mut out = Tensor4::zeros(s);
    for (i, ((xp, np), op)) in data
        .chunks_exact(plane)
        .zip(normalized.data_mut().chunks_exact_mut(plane))
        .zip(out.data_mut().chunks_exact_mut(plane))
        .enumerate()
    {
        let c = i % s.c;
        for ((&x, nv), ov) in xp.iter().zip(np.iter_mut()).zip(op.iter_mut()) {
            *nv = (x - mean_t[c]) * inv_std[c];
            *ov = gamma[c] * *nv + beta[c];
        }
    }
    Ok((
        out,
        BnSaved {
            normalized,
            inv_std,
            gamma: gamma.to_vec(),
            mode,
        },
    ))
}

pub fn batchnorm_backward<T: Scalar>(out_grad: &Tensor4<T>, saved: &BnSaved<T>) -> Result<BnGrads<T>> {
    let s = out_grad.shape();
    saved.normalized.expect_shape("batchnorm_backward", s)?;
    let plane = s.plane();
    let count = (s.n * plane) as f64;
    let mut dgamma = vec![0.0f64; s.c];
    let mut dbeta = vec![0.0f64; s.c];
    for (i, (gp, np)) in out_grad
        .data()
        .chunks_exact(plane)
        .zip(saved.normalized.data().chunks_exact(plane))
        .enumerate()
    {
        let c = i % s.c;
        for (&g, &xh) in gp.iter().zip(np) {
            dbeta[c] += g.as_f64();
            dgamma[c] += g.as_f64() * xh.as_f64();
        }
    }
    let mut gin = Tensor4::zeros(s);
    for (i, ((gp, np), ip)) in out_grad
        .data()
        .chunks_exact(plane)
        .zip(saved.normalized.data().chunks_exact(plane))
        .zip(gin.data_mut().chunks_exact_mut(plane))
        .enumerate()
    {
        let c = i % s.c;
        let scale = saved.gamma[c].as_f64() * saved.inv_std[c].as_f64();
        match saved.mode {
            BnMode::Train => {
                let mb = dbeta[c] / count;
                let mg = dgamma[c] / count;
                for ((&g, &xh), iv) in gp.iter().zip(np).zip(ip.iter_mut()) {
                    *iv = T::of_f64(scale * (g.as_f64() - mb - xh.as_f64() * mg));
                }
            }
            BnMode::Eval => {
                for (&g, iv) in gp.iter().zip(ip.iter_mut()) {
                    *iv = T::of_f64(scale * g.as_f64());
                }
            }
        }
    }
    Ok(BnGrads {
        input: gin,
        gamma: dgamma.into_iter().map(T::of_f64).collect(),
        beta: dbeta.into_iter().map(T::of_f64).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    #[test]
    fn constant_channel_maps_to_beta() {
        let x = Tensor4::<f64>::full(Shape4::new(3, 2, 2, 2), 4.0);
        let mut rs = RunningStats::new(2);
        let (y, _) = batchnorm_forward(&x, &[2.0, 3.0], &[0.5, -1.0], &mut rs, 1e-5, 0.1, BnMode::Train).unwrap();
        for n in 0..3 {
            assert!((y.get(n, 0, 1, 1) - 0.5).abs() < 1e-12);
            assert!((y.get(n, 1, 0, 1) + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_gamma_normalizes_each_channel() {
        let x = Tensor4::<f64>::from_fn(Shape4::new(4, 3, 3, 3), |i| ((i * 7919) % 101) as f64 * 0.37 - 5.0);
        let mut rs = RunningStats::new(3);
        let (y, _) = batchnorm_forward(&x, &[1.0; 3], &[0.0; 3], &mut rs, 1e-5, 0.1, BnMode::Train).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|n| (0..9).map(move |p| (n, p)))
                .map(|(n, p)| y.get(n, c, p / 3, p % 3))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn eval_with_unit_stats_is_identity() {
        let x = Tensor4::<f64>::from_fn(Shape4::new(2, 2, 2, 2), |i| i as f64 - 7.0);
        let mut rs = RunningStats::new(2);
        let (y, _) = batchnorm_forward(&x, &[1.0; 2], &[0.0; 2], &mut rs, 1e-5, 0.1, BnMode::Eval).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4 * b.abs().max(1.0));
        }
        assert_eq!(rs, RunningStats::new(2));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = Tensor4::<f64>::from_fn(Shape4::new(2, 1, 1, 2), |i| i as f64);
        let mut rs = RunningStats::new(1);
        batchnorm_forward(&x, &[1.0], &[0.0], &mut rs, 1e-5, 0.1, BnMode::Train).unwrap();
        // mean 1.5, biased var 1.25, unbiased 5/3
        assert!((rs.mean[0] - 0.15).abs() < 1e-12);
        assert!((rs.var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn beta_grad_is_channel_sum_and_zero_grad_is_zero() {
        let x = Tensor4::<f64>::from_fn(Shape4::new(2, 2, 2, 2), |i| (i as f64).sin());
        let mut rs = RunningStats::new(2);
        let (_, saved) = batchnorm_forward(&x, &[1.5, 0.5], &[0.0; 2], &mut rs, 1e-5, 0.1, BnMode::Train).unwrap();
        let g = Tensor4::<f64>::from_fn(x.shape(), |i| i as f64);
        let grads = batchnorm_backward(&g, &saved).unwrap();
        let expect0: f64 = [0, 1, 2, 3, 8, 9, 10, 11].iter().map(|&i| i as f64).sum();
        assert!((grads.beta[0] - expect0).abs() < 1e-12);
        let zero = batchnorm_backward(&Tensor4::zeros(x.shape()), &saved).unwrap();
        assert!(zero.input.data().iter().chain(&zero.gamma).chain(&zero.beta).all(|v| *v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_error() {
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 3, 2, 2));
        let mut rs = RunningStats::new(3);
        assert!(batchnorm_forward(&x, &[1.0; 2], &[0.0; 3], &mut rs, 1e-5, 0.1, BnMode::Train).is_err());
    }
}
