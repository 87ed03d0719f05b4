//! Experiment harness: config files, dataset readers, checkpoints, runs and sweeps.

pub mod checkpoint;
pub mod config_file;
pub mod dataset;
pub mod error;
pub mod run;

pub use error::{CliError, Result};

use swat_core::flops::training_flop_report;
use swat_core::plan::{plan_erk, plan_momentum, plan_uniform};
use swat_core::{Architecture, BaselineConvention, FlopReport, PlanOptions, PlanStrategy, SparsityPlan, TopKScope};

/// Plan for `arch` at `sparsity` under `strategy`, with the strategy's default exemptions.
/// Momentum plans use zero momentum buffers, which spread sparsity evenly.
pub fn plan_for(arch: &Architecture, sparsity: f64, strategy: PlanStrategy) -> Result<SparsityPlan> {
    let layers = arch.layers()?;
    let opts = PlanOptions::for_strategy(strategy, arch.dense_last);
    Ok(match strategy {
        PlanStrategy::Uniform => plan_uniform(&layers, sparsity, &opts)?,
        PlanStrategy::Erk => plan_erk(&layers, sparsity, &opts)?,
        PlanStrategy::Momentum => {
            let zeros: Vec<Vec<f32>> = layers.iter().map(|l| vec![0.0; l.spec.weight_count()]).collect();
            let bufs: Vec<Option<&[f32]>> = zeros.iter().map(|z| Some(z.as_slice())).collect();
            let masks: Vec<Option<&[bool]>> = vec![None; layers.len()];
            plan_momentum(&layers, sparsity, &bufs, &masks, &opts)?
        }
    })
}

/// Analytic per-sample FLOP report; `structured` selects whole input channels of conv weights.
pub fn flops_report(
    arch_name: &str,
    sparsity: f64,
    strategy: PlanStrategy,
    structured: bool,
    baseline: BaselineConvention,
) -> Result<FlopReport> {
    let arch = Architecture::by_name(arch_name)?;
    let plan = plan_for(&arch, sparsity, strategy)?;
    let scope = if structured { TopKScope::Channel } else { TopKScope::Nchw };
    Ok(training_flop_report(&arch, &plan, scope, baseline)?)
}
