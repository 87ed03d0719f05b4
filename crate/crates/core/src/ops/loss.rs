//! Softmax cross-entropy with label smoothing.

use crate::error::{Result, SwatError};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Mean smoothed cross-entropy over the batch and its gradient w.r.t. the logits.
///
/// The smoothed target is `(1 - ε)·onehot + ε / Y`; the gradient is
/// `(softmax - target) / N`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor4<T>,
    targets: &[usize],
    label_smoothing: f64,
) -> Result<(f64, Tensor4<T>)> {
    let s = logits.shape();
    let (n, y) = (s.n, s.sample_len());
    if targets.len() != n {
        return Err(SwatError::LengthMismatch {
            op: "softmax_cross_entropy targets",
            expected: n,
            actual: targets.len(),
        });
    }
    if !(0.0..1.0).contains(&label_smoothing) {
        return Err(SwatError::InvalidConfig(format!(
            "label smoothing {label_smoothing} outside [0, 1)"
        )));
    }
    let off = label_smoothing / y as f64;
    let on = 1.0 - label_smoothing + off;
    let mut grad = Tensor4::zeros(Shape4::matrix(n, y));
    let mut total = 0.0;
    for ((row, g_row), &t) in logits
        .data()
        .chunks_exact(y)
        .zip(grad.data_mut().chunks_exact_mut(y))
        .zip(targets)
    {
        if t >= y {
            return Err(SwatError::TargetOutOfRange { target: t, classes: y });
        }
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        for (j, (&l, gv)) in row.iter().zip(g_row.iter_mut()).enumerate() {
            let q = if j == t { on } else { off };
            let log_p = l.as_f64() - log_z;
            total -= q * log_p;
            *gv = T::of_f64((log_p.exp() - q) / n as f64);
        }
    }
    Ok((total / n as f64, grad))
}
