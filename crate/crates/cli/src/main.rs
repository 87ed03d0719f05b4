use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use swat_cli::config_file::{load_config, set};
use swat_cli::dataset::load_dataset;
use swat_cli::run::{run_experiment, sensitivity_sweep, sweep_csv, RunOptions};
use swat_cli::{checkpoint, flops_report};
use swat_core::{evaluate, BaselineConvention, PlanStrategy, SwatMode, TrainConfig};

#[derive(Parser)]
#[command(name = "swat", version, about = "Sparse weight and activation training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Plan {
    Uniform,
    Erk,
    Momentum,
}

impl From<Plan> for PlanStrategy {
    fn from(p: Plan) -> Self {
        match p {
            Plan::Uniform => PlanStrategy::Uniform,
            Plan::Erk => PlanStrategy::Erk,
            Plan::Momentum => PlanStrategy::Momentum,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Dense,
    DefaultActivation,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write metrics, checkpoint, plan and FLOP report.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
        /// Continue from a checkpoint (its config snapshot replaces --config).
        #[arg(long, conflicts_with = "config")]
        resume: Option<PathBuf>,
        /// Extra `key=value` overrides applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print the analytic training and inference FLOP reduction.
    Flops {
        #[arg(long)]
        arch: String,
        #[arg(long)]
        sparsity: f64,
        #[arg(long, value_enum, default_value = "uniform")]
        plan: Plan,
        /// Channel-level weight selection.
        #[arg(long)]
        structured: bool,
        #[arg(long, value_enum, default_value = "dense")]
        baseline: Baseline,
        /// Per-layer CSV instead of the table.
        #[arg(long)]
        csv: bool,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        /// Top-K-sparsify weights per the checkpoint's plan.
        #[arg(long)]
        sparse_inference: bool,
    },
    /// Final accuracy per (mode, sparsity) as CSV.
    Sensitivity {
        #[arg(long)]
        arch: String,
        /// A sensitivity mode name, or `all`.
        #[arg(long, default_value = "all")]
        mode: String,
        /// Comma-separated sparsities.
        #[arg(long, value_delimiter = ',')]
        sparsities: Vec<f64>,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "mnist")]
        dataset: String,
        #[arg(long, default_value_t = 1)]
        epochs: usize,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("SWAT_THREADS") {
        let n: usize = v.parse().with_context(|| format!("SWAT_THREADS=`{v}` is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn base_config(path: Option<&PathBuf>) -> anyhow::Result<TrainConfig> {
    Ok(match path {
        Some(p) => load_config(p)?,
        None => TrainConfig::default(),
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Train {
            config,
            data_dir,
            out_dir,
            seed,
            force,
            resume,
            overrides,
        } => {
            let mut c = base_config(config.as_ref())?;
            for o in &overrides {
                let Some((k, v)) = o.split_once('=') else { bail!("--set expects KEY=VALUE, got `{o}`") };
                set(&mut c, k.trim(), v.trim())?;
            }
            if let Some(s) = seed {
                c.seed = s;
            }
            c.validate()?;
            if resume.is_some() && (seed.is_some() || !overrides.is_empty()) {
                bail!("--resume continues the checkpoint's own configuration; drop --seed/--set");
            }
            let summary = run_experiment(c, &data_dir, &out_dir, &RunOptions { force, resume })?;
            if let Some(r) = summary.records.last() {
                println!(
                    "epoch {} val_acc {:.4} val_loss {:.4} train_acc {:.4}",
                    r.epoch, r.val_acc, r.val_loss, r.train_acc
                );
            }
            println!("training FLOP reduction {:.2}%", summary.flops.training_flop_reduction);
            println!("artifacts in {}", out_dir.display());
        }
        Command::Flops {
            arch,
            sparsity,
            plan,
            structured,
            baseline,
            csv,
        } => {
            let baseline = match baseline {
                Baseline::Dense => BaselineConvention::Dense,
                Baseline::DefaultActivation => BaselineConvention::DefaultActivation,
            };
            let report = flops_report(&arch, sparsity, plan.into(), structured, baseline)?;
            if csv {
                print!("{}", report.to_csv());
            } else {
                print!("{}", report.to_table());
            }
        }
        Command::Eval {
            checkpoint: path,
            data_dir,
            sparse_inference,
        } => {
            let mut t = checkpoint::load(&path)?;
            let (_, test) = load_dataset(&t.config.dataset, &data_dir, 0, t.config.test_limit)?;
            let (loss, acc) = evaluate(
                &mut t.network,
                &test,
                &t.plan,
                t.config.scope,
                sparse_inference,
                t.frozen_masks.as_deref(),
                t.config.batch_size.max(256),
            )?;
            println!("samples {} loss {:.4} accuracy {:.4}", test.len(), loss, acc);
        }
        Command::Sensitivity {
            arch,
            mode,
            sparsities,
            data_dir,
            config,
            dataset,
            epochs,
            seeds,
            out,
        } => {
            if sparsities.is_empty() {
                bail!("--sparsities needs at least one value");
            }
            let modes = if mode == "all" {
                SwatMode::SENSITIVITY.to_vec()
            } else {
                match SwatMode::parse(&mode) {
                    Some(m) => vec![m],
                    None => bail!("unknown mode `{mode}`"),
                }
            };
            let mut c = base_config(config.as_ref())?;
            c.arch = arch;
            c.dataset = dataset;
            if config.is_none() {
                c.epochs = epochs;
                c.lr_schedule = swat_core::LrSchedule::constant(epochs, 0.05);
                c.augment = false;
            }
            c.validate()?;
            let (train, test) = load_dataset(&c.dataset, &data_dir, c.train_limit, c.test_limit)?;
            let points = sensitivity_sweep(&c, &train, &test, &modes, &sparsities, &seeds, &mut |p| {
                eprintln!("{}", p.to_csv_row());
                Ok(())
            })?;
            let text = sweep_csv(&points);
            match out {
                Some(p) => std::fs::write(&p, text).with_context(|| p.display().to_string())?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}
