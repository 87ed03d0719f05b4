//! Training configuration.

use std::fmt;

use crate::arch::Architecture;
use crate::error::{Result, SwatError};
use crate::plan::{PlanOptions, PlanStrategy};
use crate::sparsify::TopKScope;

/// Which tensors are sparsified, and where.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SwatMode {
    /// No sparsification.
    Dense,
    /// Sparse weights in the forward pass; sparse weights and activations saved for backward.
    FullSwat,
    /// Sparse weights in the forward pass only; backward sees dense tensors.
    ForwardWeightOnly,
    /// Sparse input activations in the forward pass only.
    ForwardActivationOnly,
    /// Dense forward; sparse weights and activations saved for backward.
    BackwardWeightActivation,
    /// Dense forward and saved tensors; the incoming output gradient is sparsified.
    OutputGradient,
}

impl SwatMode {
    pub const ALL: [SwatMode; 6] = [
        SwatMode::Dense,
        SwatMode::FullSwat,
        SwatMode::ForwardWeightOnly,
        SwatMode::ForwardActivationOnly,
        SwatMode::BackwardWeightActivation,
        SwatMode::OutputGradient,
    ];

    /// Variants compared in sensitivity sweeps.
    pub const SENSITIVITY: [SwatMode; 4] = [
        SwatMode::ForwardWeightOnly,
        SwatMode::ForwardActivationOnly,
        SwatMode::BackwardWeightActivation,
        SwatMode::OutputGradient,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SwatMode::Dense => "dense",
            SwatMode::FullSwat => "swat",
            SwatMode::ForwardWeightOnly => "forward-weight",
            SwatMode::ForwardActivationOnly => "forward-activation",
            SwatMode::BackwardWeightActivation => "saw",
            SwatMode::OutputGradient => "output-gradient",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.to_ascii_lowercase();
        Self::ALL.into_iter().find(|m| m.name() == s).or(match s.as_str() {
            "full" | "fullswat" => Some(SwatMode::FullSwat),
            "backward-weight-activation" => Some(SwatMode::BackwardWeightActivation),
            "meprop" => Some(SwatMode::OutputGradient),
            _ => None,
        })
    }

    pub fn sparse_forward_weight(&self) -> bool {
        matches!(self, SwatMode::FullSwat | SwatMode::ForwardWeightOnly)
    }

    pub fn sparse_forward_activation(&self) -> bool {
        matches!(self, SwatMode::ForwardActivationOnly)
    }

    pub fn sparse_saved(&self) -> bool {
        matches!(self, SwatMode::FullSwat | SwatMode::BackwardWeightActivation)
    }

    pub fn selects_weights(&self) -> bool {
        self.sparse_forward_weight() || self.sparse_saved()
    }

    pub fn selects_activations(&self) -> bool {
        self.sparse_forward_activation() || self.sparse_saved()
    }
}

impl fmt::Display for SwatMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AblationConfig {
    /// Zero the gradient of non-active weights before the update.
    pub mask_nonactive_gradients: bool,
    /// Stop changing the active set after this epoch (1-based).
    pub freeze_topology_epoch: Option<usize>,
}

/// Learning rate `lr` over epochs `first..=last` (1-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrStep {
    pub first: usize,
    pub last: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub steps: Vec<LrStep>,
}

impl LrSchedule {
    pub fn constant(epochs: usize, lr: f64) -> Self {
        Self {
            steps: vec![LrStep { first: 1, last: epochs, lr }],
        }
    }

    /// Parses `first-last:lr` pairs separated by commas, e.g. `1-50:0.1,51-100:0.01`.
    pub fn parse(s: &str) -> Option<Self> {
        let mut steps = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (range, lr) = part.split_once(':')?;
            let (a, b) = range.split_once('-')?;
            steps.push(LrStep {
                first: a.trim().parse().ok()?,
                last: b.trim().parse().ok()?,
                lr: lr.trim().parse().ok()?,
            });
        }
        (!steps.is_empty()).then_some(Self { steps })
    }

    pub fn lr_at(&self, epoch: usize) -> Option<f64> {
        self.steps.iter().find(|s| (s.first..=s.last).contains(&epoch)).map(|s| s.lr)
    }

    /// Every epoch in `1..=epochs` covered exactly once and every rate positive.
    pub fn covers(&self, epochs: usize) -> bool {
        let mut next = 1;
        for s in &self.steps {
            if s.first != next || s.last < s.first || !(s.lr > 0.0) {
                return false;
            }
            next = s.last + 1;
        }
        next > epochs
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.steps.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}-{}:{}", s.first, s.last, s.lr)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: String,
    pub dataset: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    /// Linear warmup length in epochs (0 disables).
    pub warmup_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    pub label_smoothing: f64,
    pub seed: u64,
    pub sparsity: f64,
    pub strategy: PlanStrategy,
    pub scope: TopKScope,
    /// Threshold sampling period P in iterations.
    pub period: u64,
    pub mode: SwatMode,
    pub ablation: AblationConfig,
    /// Overrides the strategy's default first-layer exemption.
    pub exempt_first: Option<bool>,
    /// Overrides the architecture's default last-layer exemption.
    pub exempt_last: Option<bool>,
    /// Apply weight decay to non-active weights too.
    pub decay_nonactive: bool,
    /// Use only the first N training samples (0 = all).
    pub train_limit: usize,
    /// Use only the first N test samples (0 = all).
    pub test_limit: usize,
    pub augment: bool,
}

impl Default for TrainConfig {
    /// CIFAR-10 ResNet/VGG schedule.
    fn default() -> Self {
        Self {
            arch: "resnet18-cifar".into(),
            dataset: "cifar10".into(),
            epochs: 150,
            batch_size: 128,
            lr_schedule: LrSchedule {
                steps: vec![
                    LrStep { first: 1, last: 50, lr: 0.1 },
                    LrStep { first: 51, last: 100, lr: 0.01 },
                    LrStep { first: 101, last: 150, lr: 0.001 },
                ],
            },
            warmup_epochs: 0,
            momentum: 0.9,
            weight_decay: 5e-4,
            nesterov: false,
            label_smoothing: 0.0,
            seed: 0,
            sparsity: 0.0,
            strategy: PlanStrategy::Uniform,
            scope: TopKScope::Nchw,
            period: 1,
            mode: SwatMode::FullSwat,
            ablation: AblationConfig::default(),
            exempt_first: None,
            exempt_last: None,
            decay_nonactive: true,
            train_limit: 0,
            test_limit: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: String| Err(SwatError::InvalidConfig(format!("{key}: {why}")));
        if self.epochs == 0 {
            return bad("epochs", "must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive".into());
        }
        if !self.lr_schedule.covers(self.epochs) {
            return bad(
                "lr_schedule",
                format!("`{}` must cover epochs 1..={} contiguously with positive rates", self.lr_schedule, self.epochs),
            );
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", format!("{} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", format!("{} is negative", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label_smoothing", format!("{} outside [0, 1)", self.label_smoothing));
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return bad("sparsity", format!("{} outside [0, 1]", self.sparsity));
        }
        if self.scope == TopKScope::Channel && self.sparsity >= 1.0 {
            return bad("sparsity", "channel selection needs sparsity below 1".into());
        }
        if self.period == 0 {
            return bad("period", "must be positive".into());
        }
        if let Some(e) = self.ablation.freeze_topology_epoch {
            if e >= self.epochs {
                return bad("freeze_topology_epoch", format!("{e} is not before the last epoch {}", self.epochs));
            }
        }
        if self.warmup_epochs > self.epochs {
            return bad("warmup_epochs", format!("{} exceeds epochs {}", self.warmup_epochs, self.epochs));
        }
        Ok(())
    }

    pub fn plan_options(&self, arch: &Architecture) -> PlanOptions {
        let mut o = PlanOptions::for_strategy(self.strategy, arch.dense_last);
        if let Some(f) = self.exempt_first {
            o.exempt_first = f;
        }
        if let Some(l) = self.exempt_last {
            o.exempt_last = l;
        }
        o
    }

    /// Learning rate at 0-based iteration `iter` of epoch `epoch` (1-based),
    /// with linear warmup over the first `warmup_epochs`.
    pub fn lr_at(&self, epoch: usize, iter: u64, iters_per_epoch: u64) -> f64 {
        let base = self
            .lr_schedule
            .lr_at(epoch)
            .or_else(|| self.lr_schedule.steps.last().map(|s| s.lr))
            .unwrap_or(0.0);
        if self.warmup_epochs == 0 || iters_per_epoch == 0 {
            return base;
        }
        let progress = (iter + 1) as f64 / (self.warmup_epochs as u64 * iters_per_epoch) as f64;
        base * progress.min(1.0)
    }
}
