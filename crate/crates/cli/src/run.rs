//! Run orchestration: one training run into an output directory, and sensitivity sweeps.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use swat_core::flops::training_flop_report;
use swat_core::{BaselineConvention, Dataset, FlopReport, MetricsRecord, SwatMode, TrainConfig, TrainEvent, Trainer};

use crate::checkpoint;
use crate::config_file::to_config_text;
use crate::dataset::load_dataset;
use crate::error::{io_err, CliError, Result};

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.swat";
pub const PLAN_FILE: &str = "plan.txt";
pub const FLOPS_FILE: &str = "flops.txt";
pub const FLOPS_CSV_FILE: &str = "flops.csv";

/// Header-first CSV of [`MetricsRecord`]s, flushed after every row.
pub struct MetricsWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(io_err(path))?;
        let mut w = Self {
            out: BufWriter::new(f),
            path: path.to_path_buf(),
        };
        w.line(MetricsRecord::HEADER)?;
        Ok(w)
    }

    pub fn append(&mut self, r: &MetricsRecord) -> Result<()> {
        self.line(&r.to_csv_row())
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}")
            .and_then(|_| self.out.flush())
            .map_err(io_err(&self.path))
    }
}

pub struct RunOptions {
    pub force: bool,
    /// Continue from this checkpoint instead of starting fresh.
    pub resume: Option<PathBuf>,
}

pub struct RunSummary {
    pub records: Vec<MetricsRecord>,
    pub flops: FlopReport,
    pub trainer: Trainer<f32>,
}

fn prepare_out_dir(out_dir: &Path, force: bool) -> Result<()> {
    if out_dir.exists() {
        let empty = fs::read_dir(out_dir).map_err(io_err(out_dir))?.next().is_none();
        if !empty && !force {
            return Err(CliError::OutDirExists(out_dir.to_path_buf()));
        }
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).map_err(io_err(path))
}

/// Trains `config` on `train`/`test`, writing the config snapshot, plan table,
/// FLOP report, metrics and a checkpoint after every epoch into `out_dir`.
pub fn run_on(
    mut trainer: Trainer<f32>,
    train: &Dataset,
    test: &Dataset,
    out_dir: &Path,
    force: bool,
) -> Result<RunSummary> {
    prepare_out_dir(out_dir, force)?;
    write(out_dir.join(CONFIG_FILE), &to_config_text(&trainer.config))?;
    write(out_dir.join(PLAN_FILE), &trainer.plan.to_table())?;
    let flops = training_flop_report(
        trainer.network.arch(),
        &trainer.plan,
        trainer.config.scope,
        BaselineConvention::Dense,
    )?;
    write(out_dir.join(FLOPS_FILE), &flops.to_table())?;
    write(out_dir.join(FLOPS_CSV_FILE), &flops.to_csv())?;
    let mut metrics = MetricsWriter::create(&out_dir.join(METRICS_FILE))?;
    let ckpt = out_dir.join(CHECKPOINT_FILE);
    let mut failure = None;
    let result = trainer.run(train, test, &mut |ev| {
        if let TrainEvent::Epoch { trainer, record } = ev {
            let done = metrics.append(record).and_then(|_| checkpoint::save(&ckpt, trainer));
            if let Err(e) = done {
                let msg = e.to_string();
                failure = Some(e);
                return Err(swat_core::SwatError::Lifecycle(msg));
            }
        }
        Ok(())
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let records = result?;
    if records.is_empty() {
        checkpoint::save(&ckpt, &trainer)?;
    }
    Ok(RunSummary { records, flops, trainer })
}

/// Loads the configured dataset from `data_dir` and runs [`run_on`].
pub fn run_experiment(config: TrainConfig, data_dir: &Path, out_dir: &Path, opts: &RunOptions) -> Result<RunSummary> {
    let trainer = match &opts.resume {
        Some(path) => checkpoint::load(path)?,
        None => Trainer::new(config)?,
    };
    let c = &trainer.config;
    let (train, test) = load_dataset(&c.dataset, data_dir, c.train_limit, c.test_limit)?;
    run_on(trainer, &train, &test, out_dir, opts.force)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub mode: SwatMode,
    pub sparsity: f64,
    pub seed: u64,
    pub val_loss: f64,
    pub val_acc: f64,
}

pub const SWEEP_HEADER: &str = "mode,sparsity,seed,val_loss,val_acc";

impl SweepPoint {
    pub fn to_csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.mode, self.sparsity, self.seed, self.val_loss, self.val_acc)
    }
}

/// One short training run per `(mode, sparsity, seed)`, reporting the final
/// validation loss and accuracy. `on_point` sees each result as it completes.
pub fn sensitivity_sweep(
    base: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    modes: &[SwatMode],
    sparsities: &[f64],
    seeds: &[u64],
    on_point: &mut dyn FnMut(&SweepPoint) -> Result<()>,
) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::new();
    for &mode in modes {
        for &sparsity in sparsities {
            for &seed in seeds {
                let config = TrainConfig {
                    mode,
                    sparsity,
                    seed,
                    ..base.clone()
                };
                let mut t = Trainer::<f32>::new(config)?;
                let records = t.run(train, test, &mut |_| Ok(()))?;
                let last = records.last().expect("at least one epoch");
                let p = SweepPoint {
                    mode,
                    sparsity,
                    seed,
                    val_loss: last.val_loss,
                    val_acc: last.val_acc,
                };
                on_point(&p)?;
                points.push(p);
            }
        }
    }
    Ok(points)
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for p in points {
        s.push_str(&p.to_csv_row());
        s.push('\n');
    }
    s
}
