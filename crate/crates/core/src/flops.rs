//! Analytic multiply-accumulate counts for conv and linear layers.
//!
//! Every density argument is the retained fraction `1 - sparsity`.

use std::fmt::Write as _;

use crate::arch::{Architecture, LayerInfo};
use crate::error::{Result, SwatError};
use crate::layer::{LayerKind, LayerSpec};
use crate::plan::SparsityPlan;
use crate::sparsify::{keep_count, TopKScope};

/// Forward MACs: `d_w · F · (C·R·S) · N · H · W` for an `N x C x X x Y` input
/// and `H x W` output.
#[allow(clippy::too_many_arguments)]
pub fn conv_forward_flops(
    n: usize,
    c: usize,
    _x: usize,
    _y: usize,
    f: usize,
    r: usize,
    s: usize,
    h: usize,
    w: usize,
    weight_density: f64,
) -> f64 {
    weight_density * (f * c * r * s * n * h * w) as f64
}

/// Input-gradient MACs: `d_w · C · (F·R·S) · N · X · Y`.
#[allow(clippy::too_many_arguments)]
pub fn conv_input_grad_flops(
    n: usize,
    c: usize,
    x: usize,
    y: usize,
    f: usize,
    r: usize,
    s: usize,
    _h: usize,
    _w: usize,
    weight_density: f64,
) -> f64 {
    weight_density * (c * f * r * s * n * x * y) as f64
}

/// Weight-gradient MACs: `d_a · (N·X·Y) · F · C·R·S`.
#[allow(clippy::too_many_arguments)]
pub fn conv_weight_grad_flops(
    n: usize,
    c: usize,
    x: usize,
    y: usize,
    f: usize,
    r: usize,
    s: usize,
    _h: usize,
    _w: usize,
    activation_density: f64,
) -> f64 {
    activation_density * (n * x * y * f * c * r * s) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearPass {
    Forward,
    Backward,
}

/// Linear MACs. Forward is `d_w · N·X·Y`; backward is
/// `d_w · N·X·Y + d_a · N·X·Y` (input gradient plus weight gradient).
pub fn linear_flops(n: usize, x: usize, y: usize, weight_density: f64, activation_density: f64, pass: LinearPass) -> f64 {
    let dense = (n * x * y) as f64;
    match pass {
        LinearPass::Forward => weight_density * dense,
        LinearPass::Backward => weight_density * dense + activation_density * dense,
    }
}

/// How the dense comparison point counts weight-gradient work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BaselineConvention {
    /// Everything dense.
    #[default]
    Dense,
    /// Activations feeding weight gradients assumed 50% dense (ReLU zeros),
    /// except where the layer reads the raw network input.
    DefaultActivation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerFlops {
    pub layer_id: usize,
    pub kind: LayerKind,
    pub forward_macs: f64,
    pub input_grad_macs: f64,
    pub weight_grad_macs: f64,
    pub weight_density: f64,
    pub activation_density: f64,
}

impl LayerFlops {
    pub fn training(&self) -> f64 {
        self.forward_macs + self.input_grad_macs + self.weight_grad_macs
    }

    pub fn backward(&self) -> f64 {
        self.input_grad_macs + self.weight_grad_macs
    }
}

/// Counts for one conv/linear layer at batch size `n`. Layers reading the
/// network input have no input-gradient work.
pub fn layer_flops(info: &LayerInfo, n: usize, weight_density: f64, activation_density: f64) -> Option<LayerFlops> {
    let (fwd, ig, wg) = match info.spec {
        LayerSpec::Conv(cs) => {
            let (c, f, r, s) = (cs.channels, cs.filters, cs.kernel_h, cs.kernel_w);
            let (x, y) = (info.input.h, info.input.w);
            let (h, w) = (info.output.h, info.output.w);
            (
                conv_forward_flops(n, c, x, y, f, r, s, h, w, weight_density),
                conv_input_grad_flops(n, c, x, y, f, r, s, h, w, weight_density),
                conv_weight_grad_flops(n, c, x, y, f, r, s, h, w, activation_density),
            )
        }
        LayerSpec::Linear(l) => {
            let fwd = linear_flops(n, l.inputs, l.outputs, weight_density, activation_density, LinearPass::Forward);
            let ig = linear_flops(n, l.inputs, l.outputs, weight_density, 0.0, LinearPass::Backward);
            let wg = linear_flops(n, l.inputs, l.outputs, 0.0, activation_density, LinearPass::Backward);
            (fwd, ig, wg)
        }
        _ => return None,
    };
    Some(LayerFlops {
        layer_id: info.id,
        kind: info.spec.kind(),
        forward_macs: fwd,
        input_grad_macs: if info.reads_network_input { 0.0 } else { ig },
        weight_grad_macs: wg,
        weight_density,
        activation_density,
    })
}

/// Weight density a layer realizes at `sparsity` under `scope`: channel selection
/// keeps whole channels per filter, fine-grained scopes keep rounded counts per group.
pub fn realized_weight_density(spec: &LayerSpec, sparsity: f64, scope: TopKScope) -> f64 {
    let shape = match spec {
        LayerSpec::Conv(c) => c.weight_shape(),
        LayerSpec::Linear(l) => l.weight_shape(),
        _ => return 1.0,
    };
    if sparsity == 0.0 || shape.is_empty() {
        return 1.0;
    }
    let (groups, group) = match (scope, spec) {
        (TopKScope::Channel, LayerSpec::Conv(_)) => {
            let k = keep_count(shape.c, sparsity);
            return k as f64 / shape.c as f64;
        }
        (TopKScope::Chw, _) => (shape.n, shape.sample_len()),
        (TopKScope::Hw, LayerSpec::Conv(_)) => (shape.n * shape.c, shape.plane()),
        _ => (1, shape.len()),
    };
    (groups * keep_count(group, sparsity)) as f64 / shape.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopReport {
    pub layers: Vec<LayerFlops>,
    pub dense_layers: Vec<LayerFlops>,
    pub forward_macs: f64,
    pub backward_macs: f64,
    pub dense_forward_macs: f64,
    pub dense_backward_macs: f64,
    /// Percent reduction of forward + backward MACs.
    pub training_flop_reduction: f64,
    /// Percent reduction of forward MACs.
    pub inference_flop_reduction: f64,
    /// Percent reduction of activation elements saved for the backward pass.
    pub activation_memory_reduction: f64,
}

impl FlopReport {
    pub fn training_macs(&self) -> f64 {
        self.forward_macs + self.backward_macs
    }

    pub fn dense_training_macs(&self) -> f64 {
        self.dense_forward_macs + self.dense_backward_macs
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>5}  {:<6}  {:>7}  {:>7}  {:>14}  {:>14}  {:>14}",
            "layer", "kind", "d_w", "d_a", "forward", "input_grad", "weight_grad"
        );
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{:>5}  {:<6}  {:>7.4}  {:>7.4}  {:>14.0}  {:>14.0}  {:>14.0}",
                l.layer_id, l.kind, l.weight_density, l.activation_density, l.forward_macs, l.input_grad_macs, l.weight_grad_macs
            );
        }
        let _ = writeln!(s, "training MACs {:.0} (dense {:.0})", self.training_macs(), self.dense_training_macs());
        let _ = writeln!(s, "training FLOP reduction {:.2}%", self.training_flop_reduction);
        let _ = writeln!(s, "inference FLOP reduction {:.2}%", self.inference_flop_reduction);
        let _ = writeln!(s, "activation memory reduction {:.2}%", self.activation_memory_reduction);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,kind,weight_density,activation_density,forward_macs,input_grad_macs,weight_grad_macs\n");
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                l.layer_id, l.kind, l.weight_density, l.activation_density, l.forward_macs, l.input_grad_macs, l.weight_grad_macs
            );
        }
        s
    }
}

fn reduction(sparse: f64, dense: f64) -> f64 {
    if dense <= 0.0 {
        0.0
    } else {
        (100.0 * (1.0 - sparse / dense)).clamp(0.0, 100.0)
    }
}

/// Per-sample MAC report of `arch` trained under `plan`, with weights selected under `scope`.
pub fn training_flop_report(
    arch: &Architecture,
    plan: &SparsityPlan,
    scope: TopKScope,
    convention: BaselineConvention,
) -> Result<FlopReport> {
    let infos = arch.layers()?;
    if plan.entries.len() != infos.len() {
        return Err(SwatError::LengthMismatch {
            op: "plan entries for architecture",
            expected: infos.len(),
            actual: plan.entries.len(),
        });
    }
    let mut layers = Vec::new();
    let mut dense_layers = Vec::new();
    let (mut saved_sparse, mut saved_dense) = (0.0, 0.0);
    for info in &infos {
        let e = plan.entry(info.id)?;
        if e.kind != info.spec.kind() {
            return Err(SwatError::InvalidConfig(format!(
                "plan entry {} is {} but layer is {}",
                info.id,
                e.kind,
                info.spec.kind()
            )));
        }
        let act = info.input.len() as f64;
        match info.spec {
            LayerSpec::Conv(_) | LayerSpec::Linear(_) => {
                let (dw, da) = if e.exempt {
                    (1.0, 1.0)
                } else {
                    let weight_scope = if matches!(info.spec, LayerSpec::Linear(_)) && scope == TopKScope::Channel {
                        TopKScope::Nchw
                    } else {
                        scope
                    };
                    (realized_weight_density(&info.spec, e.weight_sparsity, weight_scope), 1.0 - e.activation_sparsity)
                };
                layers.extend(layer_flops(info, 1, dw, da));
                let base_da = match convention {
                    BaselineConvention::Dense => 1.0,
                    BaselineConvention::DefaultActivation if info.reads_network_input => 1.0,
                    BaselineConvention::DefaultActivation => 0.5,
                };
                dense_layers.extend(layer_flops(info, 1, 1.0, base_da));
                saved_sparse += da * act;
                saved_dense += act;
            }
            LayerSpec::BatchNorm(_) => {
                saved_sparse += act;
                saved_dense += act;
            }
            _ => {}
        }
    }
    let forward_macs: f64 = layers.iter().map(|l| l.forward_macs).sum();
    let backward_macs: f64 = layers.iter().map(|l| l.backward()).sum();
    let dense_forward_macs: f64 = dense_layers.iter().map(|l| l.forward_macs).sum();
    let dense_backward_macs: f64 = dense_layers.iter().map(|l| l.backward()).sum();
    Ok(FlopReport {
        training_flop_reduction: reduction(forward_macs + backward_macs, dense_forward_macs + dense_backward_macs),
        inference_flop_reduction: reduction(forward_macs, dense_forward_macs),
        activation_memory_reduction: reduction(saved_sparse, saved_dense),
        layers,
        dense_layers,
        forward_macs,
        backward_macs,
        dense_forward_macs,
        dense_backward_macs,
    })
}
