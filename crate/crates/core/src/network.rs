//! Parameter, momentum and saved-context storage for an [`Architecture`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::arch::{ArchNode, Architecture, LayerInfo};
use crate::error::{Result, SwatError};
use crate::layer::LayerSpec;
use crate::ops::{BnSaved, RunningStats};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// What a layer keeps between its forward and backward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum SavedContext<T> {
    /// Conv or linear: the weight and input activation the backward convolutions consume.
    Weighted {
        weight: Tensor4<T>,
        input: Tensor4<T>,
        /// Active-weight mask when the forward weight was sparsified.
        weight_mask: Option<Vec<bool>>,
        /// Sparsity applied to the incoming output gradient (output-gradient mode).
        grad_sparsity: Option<f64>,
    },
    BatchNorm(BnSaved<T>),
    Relu { output: Tensor4<T> },
    MaxPool { argmax: Vec<usize>, input_shape: Shape4 },
    AvgPool { input_shape: Shape4 },
    Flatten { input_shape: Shape4 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerState<T> {
    pub info: LayerInfo,
    /// Weight then bias for conv/linear, gamma then beta for batch norm.
    pub params: Vec<Tensor4<T>>,
    pub momentum: Vec<Tensor4<T>>,
    pub running: Option<RunningStats<T>>,
    pub(crate) saved: Option<SavedContext<T>>,
}

impl<T: Scalar> LayerState<T> {
    pub fn spec(&self) -> LayerSpec {
        self.info.spec
    }

    pub fn saved(&self) -> Option<&SavedContext<T>> {
        self.saved.as_ref()
    }

    pub fn weight(&self) -> Option<&Tensor4<T>> {
        if self.info.spec.is_sparsifiable() {
            self.params.first()
        } else {
            None
        }
    }
}

/// Execution tree mirroring [`ArchNode`] with layers replaced by ids.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum ExecNode {
    Layer(usize),
    Residual { main: Vec<ExecNode>, shortcut: Vec<ExecNode> },
}

fn build_exec(nodes: &[ArchNode], next: &mut usize) -> Vec<ExecNode> {
    nodes
        .iter()
        .map(|n| match n {
            ArchNode::Layer(_) => {
                *next += 1;
                ExecNode::Layer(*next - 1)
            }
            ArchNode::Residual { main, shortcut } => {
                let main = build_exec(main, next);
                let shortcut = build_exec(shortcut, next);
                ExecNode::Residual { main, shortcut }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    arch: Architecture,
    pub(crate) layers: Vec<LayerState<T>>,
    pub(crate) exec: Vec<ExecNode>,
}

impl<T: Scalar> Network<T> {
    /// Kaiming-normal (fan-in) weights, zero biases, unit BN scale and zero shift.
    pub fn from_arch(arch: Architecture, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let infos = arch.layers()?;
        let mut layers = Vec::with_capacity(infos.len());
        for info in infos {
            let shapes = info.spec.param_shapes();
            let mut params: Vec<Tensor4<T>> = shapes.iter().map(|&s| Tensor4::zeros(s)).collect();
            let mut running = None;
            match info.spec {
                LayerSpec::Conv(_) | LayerSpec::Linear(_) => {
                    let fan_in = match info.spec {
                        LayerSpec::Conv(c) => c.filter_len(),
                        LayerSpec::Linear(l) => l.inputs,
                        _ => unreachable!(),
                    };
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                        .map_err(|e| SwatError::InvalidConfig(e.to_string()))?;
                    for v in params[0].data_mut() {
                        *v = T::of_f64(normal.sample(&mut rng));
                    }
                }
                LayerSpec::BatchNorm(b) => {
                    params[0].fill(T::one());
                    running = Some(RunningStats::new(b.channels));
                }
                _ => {}
            }
            let momentum = shapes.iter().map(|&s| Tensor4::zeros(s)).collect();
            layers.push(LayerState {
                info,
                params,
                momentum,
                running,
                saved: None,
            });
        }
        let exec = build_exec(&arch.nodes, &mut 0);
        Ok(Self { arch, layers, exec })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[LayerState<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerState<T>] {
        &mut self.layers
    }

    pub fn layer(&self, id: usize) -> &LayerState<T> {
        &self.layers[id]
    }

    pub fn layer_mut(&mut self, id: usize) -> &mut LayerState<T> {
        &mut self.layers[id]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn infos(&self) -> Vec<LayerInfo> {
        self.layers.iter().map(|l| l.info).collect()
    }

    /// Ids of conv and linear layers.
    pub fn weight_layer_ids(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter(|l| l.info.spec.is_sparsifiable())
            .map(|l| l.info.id)
            .collect()
    }

    pub fn has_saved_contexts(&self) -> bool {
        self.layers.iter().any(|l| l.saved.is_some())
    }

    pub fn clear_saved(&mut self) {
        for l in &mut self.layers {
            l.saved = None;
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.params).map(|p| p.len()).sum()
    }

    /// Converts parameters, buffers and running statistics to another element type.
    /// Saved contexts are dropped.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            arch: self.arch.clone(),
            exec: self.exec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerState {
                    info: l.info,
                    params: l.params.iter().map(|p| p.cast()).collect(),
                    momentum: l.momentum.iter().map(|p| p.cast()).collect(),
                    running: l.running.as_ref().map(|r| RunningStats {
                        mean: r.mean.iter().map(|v| U::of_f64(v.as_f64())).collect(),
                        var: r.var.iter().map(|v| U::of_f64(v.as_f64())).collect(),
                    }),
                    saved: None,
                })
                .collect(),
        }
    }

    /// Checks that every parameter and momentum tensor has the shape its spec prescribes.
    pub fn validate(&self) -> Result<()> {
        for l in &self.layers {
            let shapes = l.info.spec.param_shapes();
            if shapes.len() != l.params.len() || shapes.len() != l.momentum.len() {
                return Err(SwatError::LengthMismatch {
                    op: "layer parameter count",
                    expected: shapes.len(),
                    actual: l.params.len(),
                });
            }
            for ((s, p), m) in shapes.iter().zip(&l.params).zip(&l.momentum) {
                p.expect_shape("parameter", *s)?;
                m.expect_shape("momentum buffer", *s)?;
            }
        }
        Ok(())
    }
}
