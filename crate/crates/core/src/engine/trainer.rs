//! Training state, step composition, evaluation and the epoch loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::Architecture;
use crate::data::{Augment, Dataset};
use crate::engine::config::TrainConfig;
use crate::engine::pass::{backward_pass, forward_pass, parameter_update, LayerReport, PassOptions};
use crate::error::{Result, SwatError};
use crate::flops::layer_flops;
use crate::network::Network;
use crate::ops::{softmax_cross_entropy, SgdParams};
use crate::plan::{plan_erk, plan_momentum, plan_uniform, PlanStrategy, SparsityPlan};
use crate::scalar::Scalar;
use crate::sparsify::{ThresholdCache, TopKScope};
use crate::tensor::Tensor4;

/// One row of the metrics log, emitted at the end of each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub iter: u64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub avg_weight_sparsity: f64,
    pub avg_act_sparsity: f64,
    pub fwd_macs: f64,
    pub bwd_macs: f64,
    pub lr: f64,
    pub elapsed_seconds: f64,
}

impl MetricsRecord {
    pub const HEADER: &'static str = "epoch,iter,train_loss,train_acc,val_loss,val_acc,avg_weight_sparsity,\
avg_act_sparsity,fwd_macs,bwd_macs,lr,elapsed_seconds";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            self.epoch,
            self.iter,
            self.train_loss,
            self.train_acc,
            self.val_loss,
            self.val_acc,
            self.avg_weight_sparsity,
            self.avg_act_sparsity,
            self.fwd_macs,
            self.bwd_macs,
            self.lr,
            self.elapsed_seconds
        )
    }
}

/// Result of one training step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Index of the step just taken.
    pub iter: u64,
    pub loss: f64,
    pub correct: usize,
    pub samples: usize,
    pub lr: f64,
    pub reports: Vec<LayerReport>,
}

impl StepOutcome {
    /// `(weight, activation)` realized sparsity over conv/linear layers,
    /// weighted by element counts.
    pub fn realized_sparsity(&self) -> (f64, f64) {
        let (mut wz, mut wt, mut az, mut at) = (0usize, 0usize, 0usize, 0usize);
        for r in self.reports.iter().filter(|r| r.kind.is_weighted()) {
            wz += r.weight.zeroed_count;
            wt += r.weight.total();
            az += r.activation.zeroed_count;
            at += r.activation.total();
        }
        let ratio = |z: usize, t: usize| if t == 0 { 0.0 } else { z as f64 / t as f64 };
        (ratio(wz, wt), ratio(az, at))
    }
}

/// Callback payloads of [`Trainer::run`].
pub enum TrainEvent<'a, T> {
    Step {
        trainer: &'a Trainer<T>,
        outcome: &'a StepOutcome,
    },
    Epoch {
        trainer: &'a Trainer<T>,
        record: &'a MetricsRecord,
    },
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub network: Network<T>,
    pub config: TrainConfig,
    pub plan: SparsityPlan,
    pub cache: ThresholdCache,
    /// Steps taken so far.
    pub iter: u64,
    /// Current (or next) epoch, 1-based.
    pub epoch: usize,
    pub iters_per_epoch: u64,
    /// Last active-weight mask of each layer.
    pub masks: Vec<Option<Vec<bool>>>,
    /// Masks fixed once the topology is frozen.
    pub frozen_masks: Option<Vec<Option<Vec<bool>>>>,
    /// Shuffling and augmentation randomness.
    pub rng: ChaCha8Rng,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh network of `config.arch` initialized from `config.seed`.
    pub fn new(config: TrainConfig) -> Result<Self> {
        let arch = Architecture::by_name(&config.arch)?;
        let network = Network::from_arch(arch, config.seed)?;
        Self::with_network(config, network)
    }

    pub fn with_network(config: TrainConfig, network: Network<T>) -> Result<Self> {
        config.validate()?;
        let n = network.len();
        let rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5EED));
        let mut t = Self {
            cache: ThresholdCache::new(config.period)?,
            plan: SparsityPlan {
                strategy: config.strategy,
                target: config.sparsity,
                entries: Vec::new(),
            },
            network,
            config,
            iter: 0,
            epoch: 1,
            iters_per_epoch: 0,
            masks: vec![None; n],
            frozen_masks: None,
            rng,
        };
        t.plan = t.build_plan()?;
        Ok(t)
    }

    /// Plan for the configured strategy from the current network state.
    pub fn build_plan(&self) -> Result<SparsityPlan> {
        let layers = self.network.infos();
        let opts = self.config.plan_options(self.network.arch());
        let target = self.config.sparsity;
        match self.config.strategy {
            PlanStrategy::Uniform => plan_uniform(&layers, target, &opts),
            PlanStrategy::Erk => plan_erk(&layers, target, &opts),
            PlanStrategy::Momentum => {
                let bufs: Vec<Option<&[T]>> = self
                    .network
                    .layers()
                    .iter()
                    .map(|l| l.spec().is_sparsifiable().then(|| l.momentum[0].data()))
                    .collect();
                let masks: Vec<Option<&[bool]>> = self.masks.iter().map(|m| m.as_deref()).collect();
                plan_momentum(&layers, target, &bufs, &masks, &opts)
            }
        }
    }

    pub fn sgd_params(&self, lr: f64) -> SgdParams {
        SgdParams {
            lr,
            momentum: self.config.momentum,
            weight_decay: self.config.weight_decay,
            nesterov: self.config.nesterov,
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.config.lr_at(self.epoch, self.iter, self.iters_per_epoch)
    }

    /// Forward, backward and update on one batch.
    pub fn train_step(&mut self, input: &Tensor4<T>, targets: &[usize]) -> Result<StepOutcome> {
        let period = self.config.period;
        if self.config.strategy == PlanStrategy::Momentum && self.iter > 0 && self.iter % period == 0 {
            self.plan = self.build_plan()?;
        }
        if let Some(fe) = self.config.ablation.freeze_topology_epoch {
            if self.epoch > fe && self.frozen_masks.is_none() {
                self.frozen_masks = Some(self.masks.clone());
            }
        }
        let opts = PassOptions {
            seed: self.config.seed,
            frozen_masks: self.frozen_masks.as_deref(),
            ..PassOptions::train(self.config.mode, self.config.scope, self.iter)
        };
        let out = forward_pass(&mut self.network, input, &self.plan, &mut self.cache, &opts)?;
        let (loss, logit_grad) = softmax_cross_entropy(&out.logits, targets, self.config.label_smoothing)?;
        let correct = count_correct(&out.logits, targets);
        let mut grads = backward_pass(&mut self.network, &logit_grad)?;
        let lr = self.current_lr();
        let hp = self.sgd_params(lr);
        parameter_update(
            &mut self.network,
            &grads,
            &hp,
            &self.config.ablation,
            self.config.decay_nonactive,
        )?;
        for (slot, m) in self.masks.iter_mut().zip(grads.masks.iter_mut()) {
            if m.is_some() {
                *slot = m.take();
            }
        }
        let outcome = StepOutcome {
            iter: self.iter,
            loss,
            correct,
            samples: targets.len(),
            lr,
            reports: out.reports,
        };
        self.iter += 1;
        Ok(outcome)
    }

    /// Weights are sparsified at evaluation when the forward pass trains on sparse weights.
    pub fn sparse_inference(&self) -> bool {
        self.config.mode.sparse_forward_weight() && self.config.sparsity > 0.0
    }

    pub fn evaluate(&mut self, data: &Dataset, sparsify_inference: bool) -> Result<(f64, f64)> {
        evaluate(
            &mut self.network,
            data,
            &self.plan,
            self.config.scope,
            sparsify_inference,
            self.frozen_masks.as_deref(),
            eval_batch(self.config.batch_size),
        )
    }

    /// Runs the remaining epochs, evaluating on `test` after each.
    pub fn run(
        &mut self,
        train: &Dataset,
        test: &Dataset,
        hook: &mut dyn FnMut(TrainEvent<'_, T>) -> Result<()>,
    ) -> Result<Vec<MetricsRecord>> {
        if train.is_empty() {
            return Err(SwatError::InvalidConfig("training set is empty".into()));
        }
        let mut train = train.clone();
        train.augment = if self.config.augment && train.sample.h >= 32 {
            Augment::CropFlip { pad: 4 }
        } else {
            Augment::None
        };
        let bs = self.config.batch_size;
        self.iters_per_epoch = train.len().div_ceil(bs) as u64;
        let infos = self.network.infos();
        let start = Instant::now();
        let mut records = Vec::new();
        while self.epoch <= self.config.epochs {
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut self.rng);
            let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
            let (mut ws_sum, mut as_sum, mut steps) = (0.0, 0.0, 0usize);
            let (mut fwd, mut bwd) = (0.0, 0.0);
            let mut lr = 0.0;
            for idx in order.chunks(bs) {
                let (x, y) = train.augmented_batch::<T, _>(idx, &mut self.rng);
                let outcome = self.train_step(&x, &y)?;
                loss_sum += outcome.loss * outcome.samples as f64;
                correct += outcome.correct;
                seen += outcome.samples;
                let (ws, acts) = outcome.realized_sparsity();
                ws_sum += ws;
                as_sum += acts;
                steps += 1;
                lr = outcome.lr;
                for r in outcome.reports.iter().filter(|r| r.kind.is_weighted()) {
                    let mode = self.config.mode;
                    let dw = 1.0 - r.weight.realized_sparsity;
                    let da = 1.0 - r.activation.realized_sparsity;
                    let f_w = if mode.sparse_forward_weight() { dw } else { 1.0 };
                    let (b_w, b_a) = if mode.sparse_saved() { (dw, da) } else { (1.0, 1.0) };
                    let info = &infos[r.layer_id];
                    let f_a = if mode.sparse_forward_activation() { da } else { 1.0 };
                    if let (Some(f), Some(b)) = (
                        layer_flops(info, outcome.samples, f_w * f_a, 1.0),
                        layer_flops(info, outcome.samples, b_w, b_a),
                    ) {
                        fwd += f.forward_macs;
                        bwd += b.backward();
                    }
                }
                hook(TrainEvent::Step {
                    trainer: self,
                    outcome: &outcome,
                })?;
            }
            let sparse = self.sparse_inference();
            let (val_loss, val_acc) = self.evaluate(test, sparse)?;
            let record = MetricsRecord {
                epoch: self.epoch,
                iter: self.iter,
                train_loss: loss_sum / seen as f64,
                train_acc: correct as f64 / seen as f64,
                val_loss,
                val_acc,
                avg_weight_sparsity: ws_sum / steps as f64,
                avg_act_sparsity: as_sum / steps as f64,
                fwd_macs: fwd,
                bwd_macs: bwd,
                lr,
                elapsed_seconds: start.elapsed().as_secs_f64(),
            };
            self.epoch += 1;
            hook(TrainEvent::Epoch {
                trainer: self,
                record: &record,
            })?;
            records.push(record);
        }
        Ok(records)
    }
}

fn eval_batch(train_batch: usize) -> usize {
    train_batch.max(256)
}

/// Number of rows whose arg-max logit (first on ties) equals the target.
pub fn count_correct<T: Scalar>(logits: &Tensor4<T>, targets: &[usize]) -> usize {
    let y = logits.shape().sample_len();
    logits
        .data()
        .chunks_exact(y.max(1))
        .zip(targets)
        .filter(|(row, &t)| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best == t
        })
        .count()
}

/// Mean loss and top-1 accuracy over `data` using batch-norm running statistics.
/// With `sparsify_inference` the weights are Top-K-sparsified per `plan`, or
/// masked by `frozen_masks` where given; activations stay dense.
pub fn evaluate<T: Scalar>(
    net: &mut Network<T>,
    data: &Dataset,
    plan: &SparsityPlan,
    scope: TopKScope,
    sparsify_inference: bool,
    frozen_masks: Option<&[Option<Vec<bool>>]>,
    batch_size: usize,
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(SwatError::InvalidConfig("evaluation set is empty".into()));
    }
    let scope = if scope == TopKScope::Random { TopKScope::Nchw } else { scope };
    let opts = PassOptions {
        frozen_masks: frozen_masks.filter(|_| sparsify_inference),
        ..PassOptions::eval(sparsify_inference, scope)
    };
    let mut cache = ThresholdCache::new(1)?;
    let (mut loss, mut correct) = (0.0, 0usize);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = data.batch::<T>(chunk);
        let out = forward_pass(net, &x, plan, &mut cache, &opts)?;
        let (l, _) = softmax_cross_entropy(&out.logits, &y, 0.0)?;
        loss += l * chunk.len() as f64;
        correct += count_correct(&out.logits, &y);
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

/// Builds a trainer for `config` and runs every epoch.
pub fn train_loop<T: Scalar>(
    config: TrainConfig,
    train: &Dataset,
    test: &Dataset,
    hook: &mut dyn FnMut(TrainEvent<'_, T>) -> Result<()>,
) -> Result<(Trainer<T>, Vec<MetricsRecord>)> {
    let mut trainer = Trainer::new(config)?;
    let records = trainer.run(train, test, hook)?;
    Ok((trainer, records))
}

