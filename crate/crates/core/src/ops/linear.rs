//! Fully-connected layer: `out = input · weight + bias`, weight stored `X x Y`.

use crate::error::{Result, SwatError};
use crate::ops::kernels::{axpy, dot};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Gradients produced by [`linear_backward`].
#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub input: Tensor4<T>,
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

fn as_matrix<T: Scalar>(t: &Tensor4<T>) -> (usize, usize) {
    let s = t.shape();
    (s.n, s.sample_len())
}

/// `input` is `N x X` (any `N x C x H x W` with `C·H·W = X` is accepted), `weight` is `X x Y`.
pub fn linear_forward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: Option<&[T]>,
) -> Result<Tensor4<T>> {
    let (n, x) = as_matrix(input);
    let ws = weight.shape();
    if ws.n != x || ws.h != 1 || ws.w != 1 {
        return Err(SwatError::ShapeMismatch {
            op: "linear_forward",
            left: input.shape(),
            right: ws,
        });
    }
    let y = ws.c;
    if let Some(b) = bias {
        if b.len() != y {
            return Err(SwatError::LengthMismatch {
                op: "linear bias",
                expected: y,
                actual: b.len(),
            });
        }
    }
    let mut out = Tensor4::zeros(Shape4::matrix(n, y));
    let w = weight.data();
    for (row_in, row_out) in input.data().chunks_exact(x).zip(out.data_mut().chunks_exact_mut(y)) {
        for (xi, &a) in row_in.iter().enumerate() {
            if !a.is_zero() {
                axpy(a, &w[xi * y..(xi + 1) * y], row_out);
            }
        }
        if let Some(b) = bias {
            for (o, &bv) in row_out.iter_mut().zip(b) {
                *o = *o + bv;
            }
        }
    }
    Ok(out)
}

/// Input, weight and bias gradients. The input gradient keeps `input`'s shape.
pub fn linear_backward<T: Scalar>(
    out_grad: &Tensor4<T>,
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
) -> Result<LinearGrads<T>> {
    Ok(LinearGrads {
        input: linear_backward_input(out_grad, weight, input.shape())?,
        weight: linear_backward_weight(out_grad, input)?,
        bias: linear_backward_bias(out_grad),
    })
}

pub fn linear_backward_input<T: Scalar>(
    out_grad: &Tensor4<T>,
    weight: &Tensor4<T>,
    input_shape: Shape4,
) -> Result<Tensor4<T>> {
    let ws = weight.shape();
    let (n, x) = (input_shape.n, input_shape.sample_len());
    let y = ws.c;
    if ws.n != x || out_grad.shape() != Shape4::matrix(n, y) {
        return Err(SwatError::ShapeMismatch {
            op: "linear_backward_input",
            left: out_grad.shape(),
            right: ws,
        });
    }
    let w = weight.data();
    let mut gin = Tensor4::zeros(input_shape);
    for (g_row, gi_row) in out_grad.data().chunks_exact(y).zip(gin.data_mut().chunks_exact_mut(x)) {
        for (xi, gv) in gi_row.iter_mut().enumerate() {
            *gv = dot(g_row, &w[xi * y..(xi + 1) * y]);
        }
    }
    Ok(gin)
}

pub fn linear_backward_weight<T: Scalar>(out_grad: &Tensor4<T>, input: &Tensor4<T>) -> Result<Tensor4<T>> {
    let (n, x) = as_matrix(input);
    let gs = out_grad.shape();
    if gs.n != n || gs.h != 1 || gs.w != 1 {
        return Err(SwatError::ShapeMismatch {
            op: "linear_backward_weight",
            left: gs,
            right: input.shape(),
        });
    }
    let y = gs.c;
    let mut gw = Tensor4::zeros(Shape4::matrix(x, y));
    let gwd = gw.data_mut();
    for (row_in, g_row) in input.data().chunks_exact(x).zip(out_grad.data().chunks_exact(y)) {
        for (xi, &a) in row_in.iter().enumerate() {
            if !a.is_zero() {
                axpy(a, g_row, &mut gwd[xi * y..(xi + 1) * y]);
            }
        }
    }
    Ok(gw)
}

/// Column sums of `out_grad`.
pub fn linear_backward_bias<T: Scalar>(out_grad: &Tensor4<T>) -> Vec<T> {
    let y = out_grad.shape().sample_len();
    let mut gb = vec![T::zero(); y];
    for row in out_grad.data().chunks_exact(y) {
        for (b, &g) in gb.iter_mut().zip(row) {
            *b = *b + g;
        }
    }
    gb
}
