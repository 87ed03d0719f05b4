//! The three stages of one training step: sparse forward, sparse backward,
//! dense parameter update.

use crate::engine::config::{AblationConfig, SwatMode};
use crate::error::{Result, SwatError};
use crate::layer::{LayerKind, LayerSpec};
use crate::network::{ExecNode, Network, SavedContext};
use crate::ops::{
    avgpool_backward, avgpool_forward, batchnorm_backward, batchnorm_forward, conv_backward_bias, conv_backward_input,
    conv_backward_weight, conv_forward, linear_backward_bias, linear_backward_input, linear_backward_weight,
    linear_forward, maxpool_backward, maxpool_forward, relu_backward, relu_forward, sgd_momentum_update, BnMode,
    SgdParams,
};
use crate::plan::{PlanEntry, SparsityPlan};
use crate::scalar::Scalar;
use crate::sparsify::{
    channel_l1_norms, channel_threshold_apply, channel_topk_masked, random_mask_masked, threshold_apply_grouped,
    topk_exact, topk_exact_masked, CacheEntry, SparsifyReport, Sparsified, ThresholdCache, TopKScope,
};
use crate::tensor::{Shape4, Tensor4};

/// Per-pass settings.
#[derive(Debug, Clone, Copy)]
pub struct PassOptions<'a> {
    pub mode: SwatMode,
    pub scope: TopKScope,
    /// Global iteration, drives threshold resampling.
    pub iter: u64,
    /// Seed for the random-mask baseline.
    pub seed: u64,
    pub bn_mode: BnMode,
    /// Keep contexts for a following backward pass.
    pub save: bool,
    /// Fixed active-weight masks by layer id; replaces weight selection where present.
    pub frozen_masks: Option<&'a [Option<Vec<bool>>]>,
}

impl<'a> PassOptions<'a> {
    pub fn train(mode: SwatMode, scope: TopKScope, iter: u64) -> Self {
        Self {
            mode,
            scope,
            iter,
            seed: 0,
            bn_mode: BnMode::Train,
            save: true,
            frozen_masks: None,
        }
    }

    /// Inference with batch-norm running statistics; weights sparsified when `sparse`.
    pub fn eval(sparse: bool, scope: TopKScope) -> Self {
        Self {
            mode: if sparse { SwatMode::ForwardWeightOnly } else { SwatMode::Dense },
            scope,
            iter: 0,
            seed: 0,
            bn_mode: BnMode::Eval,
            save: false,
            frozen_masks: None,
        }
    }
}

/// Sparsification outcome of one conv, linear or batch-norm layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerReport {
    pub layer_id: usize,
    pub kind: LayerKind,
    pub weight: SparsifyReport,
    pub activation: SparsifyReport,
    /// Thresholds were recomputed on this pass.
    pub resampled: bool,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub logits: Tensor4<T>,
    pub reports: Vec<LayerReport>,
}

/// Dense gradients of every parameter, by layer id, plus the active masks the
/// forward pass used.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub params: Vec<Vec<Tensor4<T>>>,
    pub masks: Vec<Option<Vec<bool>>>,
}

fn plan_entry(plan: &SparsityPlan, id: usize) -> Result<&PlanEntry> {
    match plan.entries.get(id) {
        Some(e) if e.layer_id == id => Ok(e),
        _ => plan.entry(id),
    }
}

/// Stage 1. Runs the network on `input`, sparsifying per `plan` and `opts.mode`,
/// and (when `opts.save`) stores the tensors the backward pass will consume.
pub fn forward_pass<T: Scalar>(
    net: &mut Network<T>,
    input: &Tensor4<T>,
    plan: &SparsityPlan,
    cache: &mut ThresholdCache,
    opts: &PassOptions<'_>,
) -> Result<ForwardOutput<T>> {
    for id in 0..net.len() {
        plan_entry(plan, id)?;
    }
    if opts.save && net.has_saved_contexts() {
        return Err(SwatError::Lifecycle("forward pass over unconsumed saved contexts".into()));
    }
    let exec = std::mem::take(&mut net.exec);
    let mut reports = Vec::new();
    let result = run_nodes(net, &exec, input.clone(), plan, cache, opts, &mut reports);
    net.exec = exec;
    Ok(ForwardOutput {
        logits: result?,
        reports,
    })
}

fn run_nodes<T: Scalar>(
    net: &mut Network<T>,
    nodes: &[ExecNode],
    mut x: Tensor4<T>,
    plan: &SparsityPlan,
    cache: &mut ThresholdCache,
    opts: &PassOptions<'_>,
    reports: &mut Vec<LayerReport>,
) -> Result<Tensor4<T>> {
    for node in nodes {
        x = match node {
            ExecNode::Layer(id) => run_layer(net, *id, x, plan, cache, opts, reports)?,
            ExecNode::Residual { main, shortcut } => {
                let mut a = run_nodes(net, main, x.clone(), plan, cache, opts, reports)?;
                let b = run_nodes(net, shortcut, x, plan, cache, opts, reports)?;
                a.add_assign(&b)?;
                a
            }
        };
    }
    Ok(x)
}

fn run_layer<T: Scalar>(
    net: &mut Network<T>,
    id: usize,
    x: Tensor4<T>,
    plan: &SparsityPlan,
    cache: &mut ThresholdCache,
    opts: &PassOptions<'_>,
    reports: &mut Vec<LayerReport>,
) -> Result<Tensor4<T>> {
    let layer = &mut net.layers[id];
    let spec = layer.info.spec;
    let (y, saved) = match spec {
        LayerSpec::Conv(_) | LayerSpec::Linear(_) => {
            let entry = plan_entry(plan, id)?;
            return weighted_forward(net, id, x, entry, cache, opts, reports);
        }
        LayerSpec::BatchNorm(b) => {
            let running = layer
                .running
                .as_mut()
                .ok_or_else(|| SwatError::Lifecycle(format!("batch norm layer {id} has no running statistics")))?;
            let (y, saved) = batchnorm_forward(
                &x,
                layer.params[0].data(),
                layer.params[1].data(),
                running,
                b.eps,
                b.momentum,
                opts.bn_mode,
            )?;
            reports.push(LayerReport {
                layer_id: id,
                kind: LayerKind::BatchNorm,
                weight: SparsifyReport::dense(layer.params[0].len()),
                activation: SparsifyReport::dense(x.len()),
                resampled: false,
            });
            (y, SavedContext::BatchNorm(saved))
        }
        LayerSpec::Relu => {
            let y = relu_forward(&x);
            if opts.save {
                layer.saved = Some(SavedContext::Relu { output: y.clone() });
            }
            return Ok(y);
        }
        LayerSpec::MaxPool(p) => {
            let (y, argmax) = maxpool_forward(&x, &p)?;
            (
                y,
                SavedContext::MaxPool {
                    argmax,
                    input_shape: x.shape(),
                },
            )
        }
        LayerSpec::AvgPool(p) => (avgpool_forward(&x, &p)?, SavedContext::AvgPool { input_shape: x.shape() }),
        LayerSpec::Flatten => {
            let input_shape = x.shape();
            (
                x.reshape(Shape4::matrix(input_shape.n, input_shape.sample_len()))?,
                SavedContext::Flatten { input_shape },
            )
        }
    };
    if opts.save {
        layer.saved = Some(saved);
    }
    Ok(y)
}

/// Mixes seed, layer and resample index into a random-mask seed.
fn random_seed(seed: u64, layer: usize, epoch: u64, salt: u64) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [layer as u64, epoch, salt] {
        h = (h ^ v).wrapping_mul(0x1000_0000_01B3).rotate_left(29);
    }
    h
}

/// Largest magnitude among dropped elements per group: the strict-rule
/// threshold that reproduces the selection.
fn dropped_max<T: Scalar>(values: &[T], mask: &[bool], group: usize) -> Vec<f64> {
    values
        .chunks_exact(group.max(1))
        .zip(mask.chunks_exact(group.max(1)))
        .map(|(v, m)| {
            v.iter()
                .zip(m)
                .filter(|(_, &keep)| !keep)
                .map(|(x, _)| x.abs().as_f64())
                .fold(0.0, f64::max)
        })
        .collect()
}

fn apply_mask<T: Scalar>(t: &Tensor4<T>, mask: &[bool]) -> Result<Sparsified<T>> {
    if mask.len() != t.len() {
        return Err(SwatError::LengthMismatch {
            op: "frozen mask",
            expected: t.len(),
            actual: mask.len(),
        });
    }
    let mut out = t.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(mask) {
        if !m {
            *v = T::zero();
        }
    }
    Ok(Sparsified {
        tensor: out,
        mask: mask.to_vec(),
        report: SparsifyReport::from_mask(mask),
    })
}

/// Selects the active weights; returns the sparse weight and, on resample, fresh thresholds.
fn select_weight<T: Scalar>(
    w: &Tensor4<T>,
    sparsity: f64,
    scope: TopKScope,
    id: usize,
    due: bool,
    cache: &ThresholdCache,
    opts: &PassOptions<'_>,
) -> Result<(Sparsified<T>, Option<Vec<f64>>)> {
    if let Some(mask) = opts.frozen_masks.and_then(|m| m.get(id)).and_then(|m| m.as_ref()) {
        return Ok((apply_mask(w, mask)?, None));
    }
    if scope == TopKScope::Random {
        let s = random_seed(opts.seed, id, opts.iter / cache.period(), 1);
        return Ok((random_mask_masked(w, sparsity, s)?, None));
    }
    if due {
        return Ok(match scope {
            TopKScope::Channel => {
                let (s, channels) = channel_topk_masked(w, sparsity)?;
                let norms = channel_l1_norms(w);
                let t = dropped_max(&norms, &channels, w.shape().c);
                (s, Some(t))
            }
            _ => {
                let s = topk_exact_masked(w, sparsity, scope)?;
                let group = scope.group_len(w.shape())?;
                let t = dropped_max(w.data(), &s.mask, group);
                (s, Some(t))
            }
        });
    }
    let entry = cache.get(id).ok_or(SwatError::MissingPlanEntry(id))?;
    Ok(match scope {
        TopKScope::Channel => (channel_threshold_apply(w, &entry.weight)?, None),
        _ => (threshold_apply_grouped(w, &entry.weight, scope.group_len(w.shape())?)?, None),
    })
}

fn select_activation<T: Scalar>(
    x: &Tensor4<T>,
    sparsity: f64,
    scope: TopKScope,
    id: usize,
    due: bool,
    cache: &ThresholdCache,
    opts: &PassOptions<'_>,
) -> Result<(Sparsified<T>, Option<f64>)> {
    if scope == TopKScope::Random {
        let s = random_seed(opts.seed, id, opts.iter, 2);
        return Ok((random_mask_masked(x, sparsity, s)?, None));
    }
    if due {
        let s = topk_exact_masked(x, sparsity, TopKScope::Nchw)?;
        let t = dropped_max(x.data(), &s.mask, x.len())[0];
        return Ok((s, Some(t)));
    }
    let entry = cache.get(id).ok_or(SwatError::MissingPlanEntry(id))?;
    Ok((threshold_apply_grouped(x, &[entry.activation], x.len().max(1))?, None))
}

fn weighted_forward<T: Scalar>(
    net: &mut Network<T>,
    id: usize,
    x: Tensor4<T>,
    entry: &PlanEntry,
    cache: &mut ThresholdCache,
    opts: &PassOptions<'_>,
    reports: &mut Vec<LayerReport>,
) -> Result<Tensor4<T>> {
    let layer = &mut net.layers[id];
    let spec = layer.info.spec;
    let mode = if entry.exempt { SwatMode::Dense } else { opts.mode };
    // linear weights have no spatial extent; channel and plane scopes select over the whole matrix
    let scope = match (opts.scope, spec) {
        (TopKScope::Channel | TopKScope::Hw, LayerSpec::Linear(_)) => TopKScope::Nchw,
        (s, _) => s,
    };
    let due = (mode.selects_weights() || mode.selects_activations()) && cache.is_due(id, opts.iter);
    let w = &layer.params[0];
    let (ws, w_thresholds) = if mode.selects_weights() {
        let (s, t) = select_weight(w, entry.weight_sparsity, scope, id, due, cache, opts)?;
        (Some(s), t)
    } else {
        (None, None)
    };
    let (xs, a_threshold) = if mode.selects_activations() {
        let (s, t) = select_activation(&x, entry.activation_sparsity, scope, id, due, cache, opts)?;
        (Some(s), t)
    } else {
        (None, None)
    };
    if due && scope != TopKScope::Random {
        let prev = cache.get(id);
        let weight = w_thresholds.or_else(|| prev.map(|p| p.weight.clone())).unwrap_or_default();
        let activation = a_threshold.or_else(|| prev.map(|p| p.activation)).unwrap_or(0.0);
        cache.insert(
            id,
            CacheEntry {
                weight,
                activation,
                last_sample_iter: opts.iter,
            },
        );
    }

    let fwd_w = match (&ws, mode.sparse_forward_weight()) {
        (Some(s), true) => &s.tensor,
        _ => w,
    };
    let fwd_x = match (&xs, mode.sparse_forward_activation()) {
        (Some(s), true) => &s.tensor,
        _ => &x,
    };
    let bias = layer.params.get(1).map(|b| b.data());
    let y = match spec {
        LayerSpec::Conv(c) => conv_forward(fwd_x, fwd_w, bias, &c)?,
        LayerSpec::Linear(_) => linear_forward(fwd_x, fwd_w, bias)?,
        _ => unreachable!("weighted_forward on a parameter-free layer"),
    };
    reports.push(LayerReport {
        layer_id: id,
        kind: spec.kind(),
        weight: ws.as_ref().map_or(SparsifyReport::dense(w.len()), |s| s.report),
        activation: xs.as_ref().map_or(SparsifyReport::dense(x.len()), |s| s.report),
        resampled: due,
    });
    if opts.save {
        let weight_mask = ws.as_ref().map(|s| s.mask.clone());
        let (weight, input) = if mode.sparse_saved() {
            (
                ws.map(|s| s.tensor).unwrap_or_else(|| w.clone()),
                xs.map(|s| s.tensor).unwrap_or(x),
            )
        } else {
            (w.clone(), x)
        };
        layer.saved = Some(SavedContext::Weighted {
            weight,
            input,
            weight_mask,
            grad_sparsity: (mode == SwatMode::OutputGradient).then_some(entry.activation_sparsity),
        });
    }
    Ok(y)
}

/// Stage 2. Consumes the saved contexts and returns dense gradients for every parameter.
pub fn backward_pass<T: Scalar>(net: &mut Network<T>, logit_grad: &Tensor4<T>) -> Result<Gradients<T>> {
    if let Some(l) = net.layers.iter().find(|l| l.saved.is_none()) {
        return Err(SwatError::Lifecycle(format!(
            "backward pass without saved context for layer {}; run a saving forward pass first",
            l.info.id
        )));
    }
    let mut grads = Gradients {
        params: net
            .layers
            .iter()
            .map(|l| l.info.spec.param_shapes().into_iter().map(Tensor4::zeros).collect())
            .collect(),
        masks: vec![None; net.len()],
    };
    let exec = std::mem::take(&mut net.exec);
    let result = back_nodes(net, &exec, Some(logit_grad.clone()), &mut grads);
    net.exec = exec;
    if result.is_err() {
        net.clear_saved();
    }
    result?;
    Ok(grads)
}

fn back_nodes<T: Scalar>(
    net: &mut Network<T>,
    nodes: &[ExecNode],
    mut g: Option<Tensor4<T>>,
    grads: &mut Gradients<T>,
) -> Result<Option<Tensor4<T>>> {
    for node in nodes.iter().rev() {
        g = match node {
            ExecNode::Layer(id) => back_layer(net, *id, g, grads)?,
            ExecNode::Residual { main, shortcut } => {
                let a = back_nodes(net, main, g.clone(), grads)?;
                let b = back_nodes(net, shortcut, g, grads)?;
                match (a, b) {
                    (Some(mut a), Some(b)) => {
                        a.add_assign(&b)?;
                        Some(a)
                    }
                    (a, b) => a.or(b),
                }
            }
        };
    }
    Ok(g)
}

fn back_layer<T: Scalar>(
    net: &mut Network<T>,
    id: usize,
    g: Option<Tensor4<T>>,
    grads: &mut Gradients<T>,
) -> Result<Option<Tensor4<T>>> {
    let layer = &mut net.layers[id];
    let saved = layer
        .saved
        .take()
        .ok_or_else(|| SwatError::Lifecycle(format!("layer {id} has no saved context")))?;
    let Some(g) = g else { return Ok(None) };
    let info = layer.info;
    let gin = match (info.spec, saved) {
        (
            spec @ (LayerSpec::Conv(_) | LayerSpec::Linear(_)),
            SavedContext::Weighted {
                weight,
                input,
                weight_mask,
                grad_sparsity,
            },
        ) => {
            let g = match grad_sparsity {
                Some(s) => topk_exact(&g, s, TopKScope::Nchw)?.0,
                None => g,
            };
            let (gw, gb, gin) = match spec {
                LayerSpec::Conv(c) => (
                    conv_backward_weight(&g, &input, &c)?,
                    c.bias.then(|| conv_backward_bias(&g)),
                    (!info.reads_network_input)
                        .then(|| conv_backward_input(&g, &weight, &c, input.shape()))
                        .transpose()?,
                ),
                LayerSpec::Linear(l) => (
                    linear_backward_weight(&g, &input)?,
                    l.bias.then(|| linear_backward_bias(&g)),
                    (!info.reads_network_input)
                        .then(|| linear_backward_input(&g, &weight, input.shape()))
                        .transpose()?,
                ),
                _ => unreachable!(),
            };
            let mut p = vec![gw];
            if let Some(b) = gb {
                p.push(Tensor4::from_vec(Shape4::matrix(1, b.len()), b)?);
            }
            grads.params[id] = p;
            grads.masks[id] = weight_mask;
            gin
        }
        (LayerSpec::BatchNorm(_), SavedContext::BatchNorm(saved)) => {
            let b = batchnorm_backward(&g, &saved)?;
            let c = b.gamma.len();
            grads.params[id] = vec![
                Tensor4::from_vec(Shape4::matrix(1, c), b.gamma)?,
                Tensor4::from_vec(Shape4::matrix(1, c), b.beta)?,
            ];
            Some(b.input)
        }
        (LayerSpec::Relu, SavedContext::Relu { output }) => Some(relu_backward(&g, &output)?),
        (LayerSpec::MaxPool(_), SavedContext::MaxPool { argmax, input_shape }) => {
            Some(maxpool_backward(&g, &argmax, input_shape))
        }
        (LayerSpec::AvgPool(p), SavedContext::AvgPool { input_shape }) => Some(avgpool_backward(&g, &p, input_shape)?),
        (LayerSpec::Flatten, SavedContext::Flatten { input_shape }) => Some(g.reshape(input_shape)?),
        (spec, _) => {
            return Err(SwatError::Lifecycle(format!(
                "saved context of layer {id} does not belong to a {} layer",
                spec.kind()
            )))
        }
    };
    Ok(if info.reads_network_input { None } else { gin })
}

/// Stage 3. SGD-momentum update of every parameter, active or not.
///
/// With `mask_nonactive_gradients` the gradient of non-active weights is zeroed
/// first; with `decay_nonactive == false` weight decay skips them.
pub fn parameter_update<T: Scalar>(
    net: &mut Network<T>,
    grads: &Gradients<T>,
    hp: &SgdParams,
    ablation: &AblationConfig,
    decay_nonactive: bool,
) -> Result<()> {
    if net.has_saved_contexts() {
        return Err(SwatError::Lifecycle("parameter update before the backward pass consumed the saved contexts".into()));
    }
    if grads.params.len() != net.len() {
        return Err(SwatError::LengthMismatch {
            op: "gradient layers",
            expected: net.len(),
            actual: grads.params.len(),
        });
    }
    for (id, layer) in net.layers.iter_mut().enumerate() {
        let weighted = layer.info.spec.is_sparsifiable();
        for (k, (param, buf)) in layer.params.iter_mut().zip(layer.momentum.iter_mut()).enumerate() {
            let g = &grads.params[id][k];
            g.expect_shape("parameter gradient", param.shape())?;
            let mask = grads.masks[id].as_deref().filter(|_| weighted && k == 0);
            let Some(mask) = mask.filter(|_| ablation.mask_nonactive_gradients || !decay_nonactive) else {
                sgd_momentum_update(param.data_mut(), g.data(), buf.data_mut(), hp)?;
                continue;
            };
            let wd = T::of_f64(hp.weight_decay);
            let adjusted: Vec<T> = g
                .data()
                .iter()
                .zip(param.data())
                .zip(mask)
                .map(|((&gv, &p), &active)| {
                    let gv = if active || !ablation.mask_nonactive_gradients { gv } else { T::zero() };
                    if active || decay_nonactive { gv + wd * p } else { gv }
                })
                .collect();
            let no_decay = SgdParams { weight_decay: 0.0, ..*hp };
            sgd_momentum_update(param.data_mut(), &adjusted, buf.data_mut(), &no_decay)?;
        }
    }
    Ok(())
}
