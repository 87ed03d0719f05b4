//! 2-D cross-correlation and its two backward passes.
//!
//! All three kernels unfold one sample at a time into a `K x P` column matrix
//! (`K = C·R·S`, `P = H_out·W_out`, row index `k = (c·R + r)·S + s`). Every
//! output element accumulates its `k` terms in ascending order starting from
//! zero, so results are independent of the thread count and match a direct
//! loop over `(c, r, s)`. Zero weights are skipped, which is where sparse
//! weights save work.

use rayon::prelude::*;

use crate::error::{Result, SwatError};
use crate::layer::ConvSpec;
use crate::ops::kernels::{axpy, dot};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Upper bound on column-buffer elements materialised at once by the weight-gradient kernel.
const WGRAD_COL_BUDGET: usize = 1 << 22;

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    r: usize,
    s: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(input: Shape4, spec: &ConvSpec) -> Result<Self> {
        let (ho, wo) = spec.output_hw(input.h, input.w)?;
        Ok(Self {
            c: input.c,
            h: input.h,
            w: input.w,
            r: spec.kernel_h,
            s: spec.kernel_w,
            ho,
            wo,
            stride: spec.stride,
            pad: spec.padding,
        })
    }

    fn k(&self) -> usize {
        self.c * self.r * self.s
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfolds one sample (`C x H x W`) into `col` (`K x P`). Padding reads as zero.
    fn im2col<T: Scalar>(&self, sample: &[T], col: &mut [T]) {
        let p = self.p();
        let mut k = 0;
        for c in 0..self.c {
            let plane = &sample[c * self.h * self.w..(c + 1) * self.h * self.w];
            for r in 0..self.r {
                for s in 0..self.s {
                    let row = &mut col[k * p..(k + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + r) as isize - self.pad as isize;
                        let dst = &mut row[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            dst.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + s) as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= self.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                    k += 1;
                }
            }
        }
    }

    /// Folds `col` (`K x P`) back onto one sample, accumulating overlapping taps.
    fn col2im<T: Scalar>(&self, col: &[T], sample: &mut [T]) {
        let p = self.p();
        let mut k = 0;
        for c in 0..self.c {
            let plane = &mut sample[c * self.h * self.w..(c + 1) * self.h * self.w];
            for r in 0..self.r {
                for s in 0..self.s {
                    let row = &col[k * p..(k + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + r) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + s) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < self.w {
                                let d = &mut dst[ix as usize];
                                *d = *d + row[oy * self.wo + ox];
                            }
                        }
                    }
                    k += 1;
                }
            }
        }
    }
}

fn check_weight<T: Scalar>(weight: &Tensor4<T>, spec: &ConvSpec) -> Result<()> {
    weight.expect_shape("conv weight", spec.weight_shape())
}

fn check_input(input: Shape4, spec: &ConvSpec) -> Result<()> {
    if input.c != spec.channels {
        return Err(SwatError::ShapeMismatch {
            op: "conv input",
            left: input,
            right: spec.weight_shape(),
        });
    }
    Ok(())
}

/// Output shape of a convolution over `input`.
pub fn conv_output_shape(input: Shape4, spec: &ConvSpec) -> Result<Shape4> {
    check_input(input, spec)?;
    let (ho, wo) = spec.output_hw(input.h, input.w)?;
    Ok(Shape4::new(input.n, spec.filters, ho, wo))
}

/// Cross-correlation of `input` (`N x C x H x W`) with `weight` (`F x C x R x S`).
///
/// Bias, when given, has one entry per filter and is added after accumulation.
pub fn conv_forward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
) -> Result<Tensor4<T>> {
    check_weight(weight, spec)?;
    let out_shape = conv_output_shape(input.shape(), spec)?;
    if let Some(b) = bias {
        if b.len() != spec.filters {
            return Err(SwatError::LengthMismatch {
                op: "conv bias",
                expected: spec.filters,
                actual: b.len(),
            });
        }
    }
    let g = Geometry::new(input.shape(), spec)?;
    let (k, p, f) = (g.k(), g.p(), spec.filters);
    let wdata = weight.data();
    let mut out = Tensor4::zeros(out_shape);
    let in_len = input.shape().sample_len();
    out.data_mut()
        .par_chunks_mut(f * p)
        .zip(input.data().par_chunks(in_len))
        .for_each_init(
            || vec![T::zero(); k * p],
            |col, (out_s, in_s)| {
                g.im2col(in_s, col);
                for (fi, row) in out_s.chunks_exact_mut(p).enumerate() {
                    for (ki, &wv) in wdata[fi * k..(fi + 1) * k].iter().enumerate() {
                        if !wv.is_zero() {
                            axpy(wv, &col[ki * p..(ki + 1) * p], row);
                        }
                    }
                    if let Some(b) = bias {
                        row.iter_mut().for_each(|v| *v = *v + b[fi]);
                    }
                }
            },
        );
    Ok(out)
}

/// Gradient with respect to the convolution input (transposed convolution of
/// `out_grad` with `weight`). `input_shape` disambiguates strided layers.
pub fn conv_backward_input<T: Scalar>(
    out_grad: &Tensor4<T>,
    weight: &Tensor4<T>,
    spec: &ConvSpec,
    input_shape: Shape4,
) -> Result<Tensor4<T>> {
    check_weight(weight, spec)?;
    let expected = conv_output_shape(input_shape, spec)?;
    out_grad.expect_shape("conv_backward_input out_grad", expected)?;
    let g = Geometry::new(input_shape, spec)?;
    let (k, p, f) = (g.k(), g.p(), spec.filters);
    let wdata = weight.data();
    let mut grad = Tensor4::zeros(input_shape);
    let in_len = input_shape.sample_len();
    grad.data_mut()
        .par_chunks_mut(in_len)
        .zip(out_grad.data().par_chunks(f * p))
        .for_each_init(
            || vec![T::zero(); k * p],
            |gcol, (grad_s, og_s)| {
                gcol.iter_mut().for_each(|v| *v = T::zero());
                for (fi, grow) in og_s.chunks_exact(p).enumerate() {
                    if grow.iter().all(|v| v.is_zero()) {
                        continue;
                    }
                    for (ki, &wv) in wdata[fi * k..(fi + 1) * k].iter().enumerate() {
                        if !wv.is_zero() {
                            axpy(wv, grow, &mut gcol[ki * p..(ki + 1) * p]);
                        }
                    }
                }
                g.col2im(gcol, grad_s);
            },
        );
    Ok(grad)
}

/// Gradient with respect to the weight: correlation of `input` with `out_grad`,
/// summed over the batch in sample order.
pub fn conv_backward_weight<T: Scalar>(
    out_grad: &Tensor4<T>,
    input: &Tensor4<T>,
    spec: &ConvSpec,
) -> Result<Tensor4<T>> {
    let expected = conv_output_shape(input.shape(), spec)?;
    out_grad.expect_shape("conv_backward_weight out_grad", expected)?;
    let g = Geometry::new(input.shape(), spec)?;
    let (k, p, f) = (g.k(), g.p(), spec.filters);
    let n = input.shape().n;
    let in_len = input.shape().sample_len();
    let chunk = (WGRAD_COL_BUDGET / (k * p).max(1)).clamp(1, n.max(1));
    let mut grad = Tensor4::zeros(spec.weight_shape());
    let mut cols = vec![T::zero(); chunk * k * p];
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        cols[..(end - start) * k * p]
            .par_chunks_mut(k * p)
            .enumerate()
            .for_each(|(j, col)| {
                let s = start + j;
                g.im2col(&input.data()[s * in_len..(s + 1) * in_len], col);
            });
        let cols_ref = &cols;
        let og = out_grad.data();
        grad.data_mut()
            .par_chunks_mut(k)
            .enumerate()
            .for_each(|(fi, gw)| {
                for s in start..end {
                    let grow = &og[(s * f + fi) * p..(s * f + fi + 1) * p];
                    if grow.iter().all(|v| v.is_zero()) {
                        continue;
                    }
                    let col = &cols_ref[(s - start) * k * p..(s - start + 1) * k * p];
                    for (ki, gv) in gw.iter_mut().enumerate() {
                        *gv = *gv + dot(grow, &col[ki * p..(ki + 1) * p]);
                    }
                }
            });
        start = end;
    }
    Ok(grad)
}

/// Bias gradient: per-filter sum of `out_grad` over batch and spatial positions.
pub fn conv_backward_bias<T: Scalar>(out_grad: &Tensor4<T>) -> Vec<T> {
    let s = out_grad.shape();
    let mut gb = vec![T::zero(); s.c];
    for (i, plane) in out_grad.data().chunks_exact(s.plane()).enumerate() {
        let c = i % s.c;
        gb[c] = gb[c] + plane.iter().copied().sum::<T>();
    }
    gb
}
