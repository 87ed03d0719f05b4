//! Per-layer sparsity distribution.

use std::fmt::{self, Write as _};

use crate::arch::LayerInfo;
use crate::error::{Result, SwatError};
use crate::layer::{LayerKind, LayerSpec};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlanStrategy {
    Uniform,
    Erk,
    Momentum,
}

impl PlanStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            PlanStrategy::Uniform => "uniform",
            PlanStrategy::Erk => "erk",
            PlanStrategy::Momentum => "momentum",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().as_str() {
            "uniform" => PlanStrategy::Uniform,
            "erk" => PlanStrategy::Erk,
            "momentum" => PlanStrategy::Momentum,
            _ => return None,
        })
    }
}

impl fmt::Display for PlanStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

/// Which weight layers are kept dense regardless of strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanOptions {
    pub exempt_first: bool,
    pub exempt_last: bool,
    /// Lower density bound for momentum-guided allocation.
    pub min_density: f64,
}

impl PlanOptions {
    /// Uniform keeps the first layer dense; ERK and momentum do not.
    pub fn for_strategy(strategy: PlanStrategy, dense_last: bool) -> Self {
        Self {
            exempt_first: strategy == PlanStrategy::Uniform,
            exempt_last: dense_last,
            min_density: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanEntry {
    pub layer_id: usize,
    pub kind: LayerKind,
    /// Primary weight elements (0 for parameter-free layers).
    pub params: usize,
    /// Input activation elements per sample.
    pub activations: usize,
    pub weight_sparsity: f64,
    pub activation_sparsity: f64,
    pub exempt: bool,
}

impl PlanEntry {
    pub fn is_sparse(&self) -> bool {
        !self.exempt && self.weight_sparsity > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityPlan {
    pub strategy: PlanStrategy,
    pub target: f64,
    pub entries: Vec<PlanEntry>,
}

fn check_target(target: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&target) {
        return Err(SwatError::InvalidSparsity(target));
    }
    Ok(())
}

/// Entries with every weight layer dense and exemptions marked.
fn skeleton(layers: &[LayerInfo], opts: &PlanOptions) -> Vec<PlanEntry> {
    let first = layers.iter().find(|l| l.spec.is_sparsifiable()).map(|l| l.id);
    let last = layers.iter().rev().find(|l| l.spec.is_sparsifiable()).map(|l| l.id);
    layers
        .iter()
        .map(|l| {
            let weighted = l.spec.is_sparsifiable();
            let exempt = !weighted
                || (opts.exempt_first && Some(l.id) == first)
                || (opts.exempt_last && Some(l.id) == last);
            PlanEntry {
                layer_id: l.id,
                kind: l.spec.kind(),
                params: l.spec.weight_count(),
                activations: l.input.len(),
                weight_sparsity: 0.0,
                activation_sparsity: 0.0,
                exempt,
            }
        })
        .collect()
}

pub fn plan_uniform(layers: &[LayerInfo], target: f64, opts: &PlanOptions) -> Result<SparsityPlan> {
    check_target(target)?;
    let mut entries = skeleton(layers, opts);
    for e in entries.iter_mut().filter(|e| !e.exempt) {
        e.weight_sparsity = target;
        e.activation_sparsity = target;
    }
    Ok(SparsityPlan {
        strategy: PlanStrategy::Uniform,
        target,
        entries,
    })
}

/// Erdos-Renyi-kernel score: `(C+F+R+S)/(C·F·R·S)` for conv, `(X+Y)/(X·Y)` for linear.
pub fn erk_score(spec: &LayerSpec) -> f64 {
    match spec {
        LayerSpec::Conv(c) => {
            let sum = (c.channels + c.filters + c.kernel_h + c.kernel_w) as f64;
            sum / c.weight_shape().len() as f64
        }
        LayerSpec::Linear(l) => (l.inputs + l.outputs) as f64 / (l.inputs * l.outputs) as f64,
        _ => 0.0,
    }
}

pub fn plan_erk(layers: &[LayerInfo], target: f64, opts: &PlanOptions) -> Result<SparsityPlan> {
    check_target(target)?;
    let mut entries = skeleton(layers, opts);
    let scores: Vec<f64> = layers.iter().map(|l| erk_score(&l.spec)).collect();
    allocate(&mut entries, &scores, target, 0.0)?;
    Ok(SparsityPlan {
        strategy: PlanStrategy::Erk,
        target,
        entries,
    })
}

/// Density proportional to the mean momentum magnitude over each layer's
/// active weights, floored at `opts.min_density`.
///
/// `momentum[id]` is the weight momentum buffer of layer `id` (ignored for
/// parameter-free layers); `masks[id]` the active-weight mask, `None` meaning all active.
pub fn plan_momentum<T: Scalar>(
    layers: &[LayerInfo],
    target: f64,
    momentum: &[Option<&[T]>],
    masks: &[Option<&[bool]>],
    opts: &PlanOptions,
) -> Result<SparsityPlan> {
    check_target(target)?;
    if momentum.len() != layers.len() || masks.len() != layers.len() {
        return Err(SwatError::LengthMismatch {
            op: "momentum plan inputs",
            expected: layers.len(),
            actual: momentum.len().min(masks.len()),
        });
    }
    let mut entries = skeleton(layers, opts);
    let mut scores = vec![0.0; layers.len()];
    for (i, e) in entries.iter().enumerate() {
        if e.exempt {
            continue;
        }
        let Some(buf) = momentum[i] else {
            return Err(SwatError::MissingPlanEntry(i));
        };
        let (mut sum, mut n) = (0.0, 0usize);
        for (j, v) in buf.iter().enumerate() {
            if masks[i].is_none_or(|m| m[j]) {
                sum += v.abs().as_f64();
                n += 1;
            }
        }
        scores[i] = if n == 0 { 0.0 } else { sum / n as f64 };
    }
    if entries.iter().zip(&scores).all(|(e, s)| e.exempt || *s == 0.0) {
        scores.iter_mut().for_each(|s| *s = 1.0);
    }
    allocate(&mut entries, &scores, target, opts.min_density)?;
    Ok(SparsityPlan {
        strategy: PlanStrategy::Momentum,
        target,
        entries,
    })
}

/// Finds `scale` with `Σ n_l · clamp(scale · r_l, floor, 1) = budget` over
/// non-exempt layers, where the budget keeps the parameter-weighted sparsity
/// (exempt layers counted dense) at `target`.
fn allocate(entries: &mut [PlanEntry], scores: &[f64], target: f64, floor: f64) -> Result<()> {
    let total: f64 = entries.iter().filter(|e| e.kind.is_weighted()).map(|e| e.params as f64).sum();
    let exempt: f64 = entries
        .iter()
        .filter(|e| e.kind.is_weighted() && e.exempt)
        .map(|e| e.params as f64)
        .sum();
    let free: Vec<usize> = (0..entries.len()).filter(|&i| !entries[i].exempt).collect();
    if free.is_empty() {
        return Ok(());
    }
    let budget = (1.0 - target) * total - exempt;
    let kept = |scale: f64| -> f64 {
        free.iter()
            .map(|&i| entries[i].params as f64 * (scale * scores[i]).clamp(floor, 1.0))
            .sum()
    };
    let free_total: f64 = free.iter().map(|&i| entries[i].params as f64).sum();
    let tol = 1e-9 * total.max(1.0);
    if budget < kept(0.0) - tol || budget > free_total + tol {
        return Err(SwatError::InfeasiblePlan(format!(
            "target sparsity {target} needs {budget:.0} of {free_total:.0} sparsifiable weights kept, \
             reachable range is {:.0}..={free_total:.0}",
            kept(0.0)
        )));
    }
    let mut hi = 1.0;
    while kept(hi) < budget && hi < 1e300 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kept(mid) < budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    for &i in &free {
        let d = (hi * scores[i]).clamp(floor, 1.0);
        let s = (1.0 - d).clamp(0.0, 1.0);
        entries[i].weight_sparsity = s;
        entries[i].activation_sparsity = s;
    }
    Ok(())
}

impl LayerKind {
    /// Conv and linear.
    pub fn is_weighted(&self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::Linear)
    }
}

impl SparsityPlan {
    pub fn entry(&self, layer: usize) -> Result<&PlanEntry> {
        self.entries
            .iter()
            .find(|e| e.layer_id == layer)
            .ok_or(SwatError::MissingPlanEntry(layer))
    }

    /// `(weight, activation)` averages over conv/linear layers, weighted by
    /// parameter count and input activation count respectively.
    pub fn network_average_sparsity(&self) -> (f64, f64) {
        network_average_sparsity(self)
    }

    /// Human-readable table: layer, kind, params, activations, weight and activation sparsity, exemption.
    pub fn to_table(&self) -> String {
        let mut s = format!("# strategy={} target={}\n", self.strategy, self.target);
        let _ = writeln!(
            s,
            "{:>5}  {:<9}  {:>10}  {:>11}  {:>8}  {:>8}  {}",
            "layer", "kind", "params", "activations", "w_sparse", "a_sparse", "exempt"
        );
        for e in self.entries.iter().filter(|e| e.kind.is_weighted() || e.kind == LayerKind::BatchNorm) {
            let _ = writeln!(
                s,
                "{:>5}  {:<9}  {:>10}  {:>11}  {:>8.4}  {:>8.4}  {}",
                e.layer_id, e.kind, e.params, e.activations, e.weight_sparsity, e.activation_sparsity, e.exempt
            );
        }
        let (w, a) = self.network_average_sparsity();
        let _ = writeln!(s, "# average weight sparsity {w:.4}, activation sparsity {a:.4}");
        s
    }
}

pub fn network_average_sparsity(plan: &SparsityPlan) -> (f64, f64) {
    let (mut wn, mut wd, mut an, mut ad) = (0.0, 0.0, 0.0, 0.0);
    for e in plan.entries.iter().filter(|e| e.kind.is_weighted()) {
        wn += e.weight_sparsity * e.params as f64;
        wd += e.params as f64;
        an += e.activation_sparsity * e.activations as f64;
        ad += e.activations as f64;
    }
    (
        if wd > 0.0 { wn / wd } else { 0.0 },
        if ad > 0.0 { an / ad } else { 0.0 },
    )
}
