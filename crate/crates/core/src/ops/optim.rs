//! SGD with momentum, weight decay and optional Nesterov.

use crate::error::{Result, SwatError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdParams {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
}

/// One in-place update:
/// `d = grad + λ·param`, `buf = μ·buf + d`,
/// `param -= lr·buf` (or `lr·(d + μ·buf)` with Nesterov).
pub fn sgd_momentum_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    momentum_buffer: &mut [T],
    hp: &SgdParams,
) -> Result<()> {
    if grad.len() != param.len() || momentum_buffer.len() != param.len() {
        return Err(SwatError::LengthMismatch {
            op: "sgd_momentum_update",
            expected: param.len(),
            actual: if grad.len() != param.len() { grad.len() } else { momentum_buffer.len() },
        });
    }
    let lr = T::of_f64(hp.lr);
    let mu = T::of_f64(hp.momentum);
    let wd = T::of_f64(hp.weight_decay);
    for ((p, &g), b) in param.iter_mut().zip(grad).zip(momentum_buffer.iter_mut()) {
        let d = g + wd * *p;
        *b = mu * *b + d;
        let step = if hp.nesterov { d + mu * *b } else { *b };
        *p = *p - lr * step;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(lr: f64, momentum: f64, weight_decay: f64) -> SgdParams {
        SgdParams { lr, momentum, weight_decay, nesterov: false }
    }

    #[test]
    fn zero_grad_zero_buffer_is_noop() {
        let mut p = vec![1.0, -2.0];
        let mut b = vec![0.0; 2];
        sgd_momentum_update(&mut p, &[0.0; 2], &mut b, &hp(0.1, 0.9, 0.0)).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn plain_sgd_without_momentum() {
        let mut p = vec![1.0f64];
        let mut b = vec![0.0];
        sgd_momentum_update(&mut p, &[0.5], &mut b, &hp(0.1, 0.0, 0.0)).unwrap();
        assert!((p[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_scalar_recurrence() {
        let (lr, mu, wd) = (0.1, 0.9, 5e-4);
        let grads = [0.3, -0.7];
        let mut p = vec![1.5f64];
        let mut b = vec![0.0];
        for g in grads {
            sgd_momentum_update(&mut p, &[g], &mut b, &hp(lr, mu, wd)).unwrap();
        }
        // hand recurrence
        let mut pr = 1.5f64;
        let mut br = 0.0f64;
        for g in grads {
            br = mu * br + (g + wd * pr);
            pr -= lr * br;
        }
        assert!((p[0] - pr).abs() < 1e-12);
        assert!((b[0] - br).abs() < 1e-12);
    }

    #[test]
    fn nesterov_uses_lookahead() {
        let mut p = vec![0.0f64];
        let mut b = vec![1.0];
        let params = SgdParams { lr: 1.0, momentum: 0.5, weight_decay: 0.0, nesterov: true };
        sgd_momentum_update(&mut p, &[2.0], &mut b, &params).unwrap();
        // buf = 0.5 + 2 = 2.5; step = 2 + 0.5 * 2.5 = 3.25
        assert_eq!(b[0], 2.5);
        assert_eq!(p[0], -3.25);
    }

    #[test]
    fn length_mismatch_is_error() {
        let mut p = vec![0.0f32; 2];
        let mut b = vec![0.0; 2];
        assert!(sgd_momentum_update(&mut p, &[0.0; 3], &mut b, &hp(0.1, 0.9, 0.0)).is_err());
    }
}
