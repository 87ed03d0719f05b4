//! Layer descriptions and shape inference.

use std::fmt;

use crate::error::{Result, SwatError};
use crate::tensor::Shape4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    /// Output channels (F).
    pub filters: usize,
    /// Input channels (C).
    pub channels: usize,
    /// Kernel height (R).
    pub kernel_h: usize,
    /// Kernel width (S).
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Square kernel, no bias.
    pub fn new(channels: usize, filters: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            filters,
            channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
            bias: false,
        }
    }

    pub fn with_bias(mut self) -> Self {
        self.bias = true;
        self
    }

    pub fn weight_shape(&self) -> Shape4 {
        Shape4::new(self.filters, self.channels, self.kernel_h, self.kernel_w)
    }

    /// Length of one filter (C·R·S).
    pub fn filter_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel_h || pw < self.kernel_w || self.stride == 0 {
            return Err(SwatError::InvalidConfig(format!(
                "conv kernel {}x{} stride {} does not fit {}x{} input with padding {}",
                self.kernel_h, self.kernel_w, self.stride, h, w, self.padding
            )));
        }
        Ok((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearSpec {
    /// Input features (X).
    pub inputs: usize,
    /// Output features (Y).
    pub outputs: usize,
    pub bias: bool,
}

impl LinearSpec {
    pub fn weight_shape(&self) -> Shape4 {
        Shape4::matrix(self.inputs, self.outputs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormSpec {
    pub channels: usize,
    pub eps: f64,
    /// Running-statistics momentum.
    pub momentum: f64,
}

impl BatchNormSpec {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
}

impl PoolSpec {
    pub fn new(kernel: usize, stride: usize) -> Self {
        Self { kernel, stride }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h < self.kernel || w < self.kernel || self.stride == 0 {
            return Err(SwatError::InvalidConfig(format!(
                "pool kernel {} stride {} does not fit {}x{} input",
                self.kernel, self.stride, h, w
            )));
        }
        Ok(((h - self.kernel) / self.stride + 1, (w - self.kernel) / self.stride + 1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv(ConvSpec),
    Linear(LinearSpec),
    BatchNorm(BatchNormSpec),
    Relu,
    MaxPool(PoolSpec),
    AvgPool(PoolSpec),
    Flatten,
}

/// Coarse layer category, used for plans, reports and file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    Linear,
    BatchNorm,
    Relu,
    MaxPool,
    AvgPool,
    Flatten,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Linear => "linear",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool => "maxpool",
            LayerKind::AvgPool => "avgpool",
            LayerKind::Flatten => "flatten",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Conv(_) => LayerKind::Conv,
            LayerSpec::Linear(_) => LayerKind::Linear,
            LayerSpec::BatchNorm(_) => LayerKind::BatchNorm,
            LayerSpec::Relu => LayerKind::Relu,
            LayerSpec::MaxPool(_) => LayerKind::MaxPool,
            LayerSpec::AvgPool(_) => LayerKind::AvgPool,
            LayerSpec::Flatten => LayerKind::Flatten,
        }
    }

    /// True for conv and linear layers: the layers Top-K sparsification applies to.
    pub fn is_sparsifiable(&self) -> bool {
        matches!(self, LayerSpec::Conv(_) | LayerSpec::Linear(_))
    }

    /// Shapes of the trainable parameter tensors, in storage order.
    ///
    /// Conv: weight then optional bias. Linear: weight then optional bias.
    /// BatchNorm: gamma then beta (each `1 x C x 1 x 1`).
    pub fn param_shapes(&self) -> Vec<Shape4> {
        match self {
            LayerSpec::Conv(c) => {
                let mut v = vec![c.weight_shape()];
                if c.bias {
                    v.push(Shape4::matrix(1, c.filters));
                }
                v
            }
            LayerSpec::Linear(l) => {
                let mut v = vec![l.weight_shape()];
                if l.bias {
                    v.push(Shape4::matrix(1, l.outputs));
                }
                v
            }
            LayerSpec::BatchNorm(b) => vec![Shape4::matrix(1, b.channels); 2],
            _ => Vec::new(),
        }
    }

    /// Number of elements in the primary weight tensor (0 for parameter-free layers).
    pub fn weight_count(&self) -> usize {
        match self {
            LayerSpec::Conv(c) => c.weight_shape().len(),
            LayerSpec::Linear(l) => l.weight_shape().len(),
            _ => 0,
        }
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        match self {
            LayerSpec::Conv(c) => {
                if input.c != c.channels {
                    return Err(SwatError::ShapeMismatch {
                        op: "conv input channels",
                        left: input,
                        right: c.weight_shape(),
                    });
                }
                let (ho, wo) = c.output_hw(input.h, input.w)?;
                Ok(Shape4::new(input.n, c.filters, ho, wo))
            }
            LayerSpec::Linear(l) => {
                if input.sample_len() != l.inputs || input.h != 1 || input.w != 1 {
                    return Err(SwatError::ShapeMismatch {
                        op: "linear input features",
                        left: input,
                        right: l.weight_shape(),
                    });
                }
                Ok(Shape4::matrix(input.n, l.outputs))
            }
            LayerSpec::BatchNorm(b) => {
                if input.c != b.channels {
                    return Err(SwatError::ShapeMismatch {
                        op: "batchnorm channels",
                        left: input,
                        right: Shape4::matrix(1, b.channels),
                    });
                }
                Ok(input)
            }
            LayerSpec::Relu => Ok(input),
            LayerSpec::MaxPool(p) | LayerSpec::AvgPool(p) => {
                let (ho, wo) = p.output_hw(input.h, input.w)?;
                Ok(Shape4::new(input.n, input.c, ho, wo))
            }
            LayerSpec::Flatten => Ok(Shape4::matrix(input.n, input.sample_len())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_output_shape_follows_stride_and_padding() {
        let spec = LayerSpec::Conv(ConvSpec::new(3, 8, 3, 1, 1));
        assert_eq!(
            spec.output_shape(Shape4::new(2, 3, 32, 32)).unwrap(),
            Shape4::new(2, 8, 32, 32)
        );
        let spec = LayerSpec::Conv(ConvSpec::new(3, 8, 3, 2, 1));
        assert_eq!(
            spec.output_shape(Shape4::new(2, 3, 32, 32)).unwrap(),
            Shape4::new(2, 8, 16, 16)
        );
        assert!(spec.output_shape(Shape4::new(2, 4, 32, 32)).is_err());
    }

    #[test]
    fn flatten_then_linear() {
        let flat = LayerSpec::Flatten.output_shape(Shape4::new(5, 16, 7, 7)).unwrap();
        assert_eq!(flat, Shape4::matrix(5, 784));
        let lin = LayerSpec::Linear(LinearSpec { inputs: 784, outputs: 10, bias: true });
        assert_eq!(lin.output_shape(flat).unwrap(), Shape4::matrix(5, 10));
        assert!(lin.output_shape(Shape4::matrix(5, 783)).is_err());
    }

    #[test]
    fn pool_shapes() {
        let p = LayerSpec::MaxPool(PoolSpec::new(2, 2));
        assert_eq!(p.output_shape(Shape4::new(1, 4, 28, 28)).unwrap(), Shape4::new(1, 4, 14, 14));
        let g = LayerSpec::AvgPool(PoolSpec::new(4, 4));
        assert_eq!(g.output_shape(Shape4::new(1, 4, 4, 4)).unwrap(), Shape4::new(1, 4, 1, 1));
    }
}
