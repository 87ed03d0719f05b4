//! Named network architectures as layer trees with shape inference.

use crate::error::{Result, SwatError};
use crate::layer::{BatchNormSpec, ConvSpec, LayerSpec, LinearSpec, PoolSpec};
use crate::tensor::Shape4;

/// Node of an architecture: a single layer or a residual block whose output is
/// `main(x) + shortcut(x)` (an empty shortcut is the identity).
#[derive(Debug, Clone, PartialEq)]
pub enum ArchNode {
    Layer(LayerSpec),
    Residual { main: Vec<ArchNode>, shortcut: Vec<ArchNode> },
}

/// A layer in flattened (execution) order with its per-sample shapes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerInfo {
    pub id: usize,
    pub spec: LayerSpec,
    /// Input shape with `n = 1`.
    pub input: Shape4,
    /// Output shape with `n = 1`.
    pub output: Shape4,
    /// The layer reads the network input directly (no gradient flows further back).
    pub reads_network_input: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub name: String,
    /// Per-sample input shape (`n = 1`).
    pub input: Shape4,
    pub classes: usize,
    pub nodes: Vec<ArchNode>,
    /// Whether the last weight layer stays dense under the default plans.
    pub dense_last: bool,
}

pub const ARCHITECTURES: [&str; 4] = ["tiny-cnn", "resnet18-cifar", "vgg16-cifar", "wrn-16-8"];

fn conv(c: usize, f: usize, k: usize, stride: usize, pad: usize) -> ArchNode {
    ArchNode::Layer(LayerSpec::Conv(ConvSpec::new(c, f, k, stride, pad)))
}

fn bn(c: usize) -> ArchNode {
    ArchNode::Layer(LayerSpec::BatchNorm(BatchNormSpec::new(c)))
}

fn relu() -> ArchNode {
    ArchNode::Layer(LayerSpec::Relu)
}

fn linear(x: usize, y: usize, bias: bool) -> ArchNode {
    ArchNode::Layer(LayerSpec::Linear(LinearSpec {
        inputs: x,
        outputs: y,
        bias,
    }))
}

impl Architecture {
    pub fn new(name: impl Into<String>, input: Shape4, classes: usize, nodes: Vec<ArchNode>) -> Result<Self> {
        let arch = Self {
            name: name.into(),
            input: Shape4::new(1, input.c, input.h, input.w),
            classes,
            nodes,
            dense_last: false,
        };
        let out = arch.output_shape()?;
        if out != Shape4::matrix(1, classes) {
            return Err(SwatError::ShapeMismatch {
                op: "architecture output",
                left: out,
                right: Shape4::matrix(1, classes),
            });
        }
        Ok(arch)
    }

    /// Builds one of [`ARCHITECTURES`].
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "tiny-cnn" => Self::tiny_cnn(),
            "resnet18-cifar" => Self::resnet18_cifar(),
            "vgg16-cifar" => Self::vgg16_cifar(),
            "wrn-16-8" => Self::wrn(16, 8),
            other => Err(SwatError::InvalidConfig(format!(
                "unknown architecture `{other}` (expected one of {})",
                ARCHITECTURES.join(", ")
            ))),
        }
    }

    /// Two conv + BN blocks and two linear layers for 1x28x28 inputs.
    pub fn tiny_cnn() -> Result<Self> {
        let pool = ArchNode::Layer(LayerSpec::MaxPool(PoolSpec::new(2, 2)));
        let nodes = vec![
            conv(1, 8, 3, 1, 1),
            bn(8),
            relu(),
            pool.clone(),
            conv(8, 16, 3, 1, 1),
            bn(16),
            relu(),
            pool,
            ArchNode::Layer(LayerSpec::Flatten),
            linear(16 * 7 * 7, 64, true),
            relu(),
            linear(64, 10, true),
        ];
        Self::new("tiny-cnn", Shape4::new(1, 1, 28, 28), 10, nodes)
    }

    /// ResNet-18 with a 3x3 stem for 32x32 inputs.
    pub fn resnet18_cifar() -> Result<Self> {
        let mut nodes = vec![conv(3, 64, 3, 1, 1), bn(64), relu()];
        let mut c = 64;
        for (f, stride) in [(64, 1), (128, 2), (256, 2), (512, 2)] {
            for b in 0..2 {
                let s = if b == 0 { stride } else { 1 };
                let shortcut = if s != 1 || c != f {
                    vec![conv(c, f, 1, s, 0), bn(f)]
                } else {
                    Vec::new()
                };
                nodes.push(ArchNode::Residual {
                    main: vec![conv(c, f, 3, s, 1), bn(f), relu(), conv(f, f, 3, 1, 1), bn(f)],
                    shortcut,
                });
                nodes.push(relu());
                c = f;
            }
        }
        nodes.push(ArchNode::Layer(LayerSpec::AvgPool(PoolSpec::new(4, 4))));
        nodes.push(ArchNode::Layer(LayerSpec::Flatten));
        nodes.push(linear(512, 10, true));
        Self::new("resnet18-cifar", Shape4::new(1, 3, 32, 32), 10, nodes)
    }

    /// VGG-16 with BN and a single linear classifier for 32x32 inputs.
    pub fn vgg16_cifar() -> Result<Self> {
        const CFG: [usize; 18] = [64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0];
        let mut nodes = Vec::new();
        let mut c = 3;
        for &f in &CFG {
            if f == 0 {
                nodes.push(ArchNode::Layer(LayerSpec::MaxPool(PoolSpec::new(2, 2))));
            } else {
                nodes.extend([conv(c, f, 3, 1, 1), bn(f), relu()]);
                c = f;
            }
        }
        nodes.push(ArchNode::Layer(LayerSpec::Flatten));
        nodes.push(linear(512, 10, true));
        Self::new("vgg16-cifar", Shape4::new(1, 3, 32, 32), 10, nodes)
    }

    /// Pre-activation wide ResNet of the given depth and widening factor for 32x32 inputs.
    /// The first and last layers stay dense by default.
    pub fn wrn(depth: usize, widen: usize) -> Result<Self> {
        if depth < 10 || (depth - 4) % 6 != 0 {
            return Err(SwatError::InvalidConfig(format!("wide resnet depth {depth} is not 6n+4")));
        }
        let blocks = (depth - 4) / 6;
        let mut nodes = vec![conv(3, 16, 3, 1, 1)];
        let mut c = 16;
        for (g, stride) in [(16 * widen, 1), (32 * widen, 2), (64 * widen, 2)] {
            for b in 0..blocks {
                let s = if b == 0 { stride } else { 1 };
                if c != g || s != 1 {
                    // both branches share the pre-activation
                    nodes.extend([bn(c), relu()]);
                    nodes.push(ArchNode::Residual {
                        main: vec![conv(c, g, 3, s, 1), bn(g), relu(), conv(g, g, 3, 1, 1)],
                        shortcut: vec![conv(c, g, 1, s, 0)],
                    });
                } else {
                    nodes.push(ArchNode::Residual {
                        main: vec![bn(c), relu(), conv(c, g, 3, 1, 1), bn(g), relu(), conv(g, g, 3, 1, 1)],
                        shortcut: Vec::new(),
                    });
                }
                c = g;
            }
        }
        nodes.extend([bn(c), relu()]);
        nodes.push(ArchNode::Layer(LayerSpec::AvgPool(PoolSpec::new(8, 8))));
        nodes.push(ArchNode::Layer(LayerSpec::Flatten));
        nodes.push(linear(c, 10, true));
        let mut arch = Self::new(format!("wrn-{depth}-{widen}"), Shape4::new(1, 3, 32, 32), 10, nodes)?;
        arch.dense_last = true;
        Ok(arch)
    }

    /// Layers in execution order; residual blocks list the main branch before the shortcut.
    pub fn layers(&self) -> Result<Vec<LayerInfo>> {
        let mut out = Vec::new();
        walk(&self.nodes, self.input, true, &mut out)?;
        Ok(out)
    }

    pub fn output_shape(&self) -> Result<Shape4> {
        let mut out = Vec::new();
        walk(&self.nodes, self.input, true, &mut out)
    }

    /// Id of the first conv/linear layer.
    pub fn first_weight_layer(&self) -> Result<Option<usize>> {
        Ok(self.layers()?.iter().find(|l| l.spec.is_sparsifiable()).map(|l| l.id))
    }

    pub fn last_weight_layer(&self) -> Result<Option<usize>> {
        Ok(self.layers()?.iter().rev().find(|l| l.spec.is_sparsifiable()).map(|l| l.id))
    }
}

fn walk(nodes: &[ArchNode], mut shape: Shape4, mut at_input: bool, out: &mut Vec<LayerInfo>) -> Result<Shape4> {
    for node in nodes {
        match node {
            ArchNode::Layer(spec) => {
                let next = spec.output_shape(shape)?;
                out.push(LayerInfo {
                    id: out.len(),
                    spec: *spec,
                    input: shape,
                    output: next,
                    reads_network_input: at_input,
                });
                // activations and pooling pass the raw input on to the next layer
                at_input = at_input && !spec.is_sparsifiable() && !matches!(spec, LayerSpec::BatchNorm(_));
                shape = next;
            }
            ArchNode::Residual { main, shortcut } => {
                let a = walk(main, shape, at_input, out)?;
                let b = walk(shortcut, shape, at_input, out)?;
                if a != b {
                    return Err(SwatError::ShapeMismatch {
                        op: "residual branches",
                        left: a,
                        right: b,
                    });
                }
                at_input = false;
                shape = a;
            }
        }
    }
    Ok(shape)
}
