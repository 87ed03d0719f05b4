//! ReLU, max pooling and average pooling.

use crate::error::Result;
use crate::layer::PoolSpec;
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

pub fn relu_forward<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes gradient where the forward output was positive.
pub fn relu_backward<T: Scalar>(out_grad: &Tensor4<T>, output: &Tensor4<T>) -> Result<Tensor4<T>> {
    output.expect_shape("relu_backward", out_grad.shape())?;
    let data = out_grad
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::from_vec(out_grad.shape(), data)
}

fn pool_shape(input: Shape4, spec: &PoolSpec) -> Result<Shape4> {
    let (ho, wo) = spec.output_hw(input.h, input.w)?;
    Ok(Shape4::new(input.n, input.c, ho, wo))
}

/// Max pooling. Returns the output and, per output element, the flat input
/// index it was taken from (first index wins on ties).
pub fn maxpool_forward<T: Scalar>(input: &Tensor4<T>, spec: &PoolSpec) -> Result<(Tensor4<T>, Vec<usize>)> {
    let s = input.shape();
    let os = pool_shape(s, spec)?;
    let mut out = Tensor4::zeros(os);
    let mut argmax = vec![0usize; os.len()];
    let data = input.data();
    let mut o = 0;
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for oy in 0..os.h {
            for ox in 0..os.w {
                let mut best_i = base + (oy * spec.stride) * s.w + ox * spec.stride;
                let mut best = data[best_i];
                for ky in 0..spec.kernel {
                    for kx in 0..spec.kernel {
                        let i = base + (oy * spec.stride + ky) * s.w + ox * spec.stride + kx;
                        if data[i] > best {
                            best = data[i];
                            best_i = i;
                        }
                    }
                }
                out.data_mut()[o] = best;
                argmax[o] = best_i;
                o += 1;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool_backward<T: Scalar>(out_grad: &Tensor4<T>, argmax: &[usize], input_shape: Shape4) -> Tensor4<T> {
    let mut gin = Tensor4::zeros(input_shape);
    let gd = gin.data_mut();
    for (&g, &i) in out_grad.data().iter().zip(argmax) {
        gd[i] = gd[i] + g;
    }
    gin
}

pub fn avgpool_forward<T: Scalar>(input: &Tensor4<T>, spec: &PoolSpec) -> Result<Tensor4<T>> {
    let s = input.shape();
    let os = pool_shape(s, spec)?;
    let scale = T::of_f64(1.0 / (spec.kernel * spec.kernel) as f64);
    let data = input.data();
    let mut out = Tensor4::zeros(os);
    let mut o = 0;
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for oy in 0..os.h {
            for ox in 0..os.w {
                let mut acc = T::zero();
                for ky in 0..spec.kernel {
                    let row = base + (oy * spec.stride + ky) * s.w + ox * spec.stride;
                    for kx in 0..spec.kernel {
                        acc = acc + data[row + kx];
                    }
                }
                out.data_mut()[o] = acc * scale;
                o += 1;
            }
        }
    }
    Ok(out)
}

/// Spreads each output gradient uniformly (`g / k²`) over its window.
pub fn avgpool_backward<T: Scalar>(out_grad: &Tensor4<T>, spec: &PoolSpec, input_shape: Shape4) -> Result<Tensor4<T>> {
    let os = pool_shape(input_shape, spec)?;
    out_grad.expect_shape("avgpool_backward", os)?;
    let scale = T::of_f64(1.0 / (spec.kernel * spec.kernel) as f64);
    let mut gin = Tensor4::zeros(input_shape);
    let gd = gin.data_mut();
    let mut o = 0;
    for nc in 0..input_shape.n * input_shape.c {
        let base = nc * input_shape.plane();
        for oy in 0..os.h {
            for ox in 0..os.w {
                let g = out_grad.data()[o] * scale;
                for ky in 0..spec.kernel {
                    let row = base + (oy * spec.stride + ky) * input_shape.w + ox * spec.stride;
                    for kx in 0..spec.kernel {
                        gd[row + kx] = gd[row + kx] + g;
                    }
                }
                o += 1;
            }
        }
    }
    Ok(gin)
}
