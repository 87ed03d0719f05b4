//! Flat `key=value` training configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys not listed in
//! [`KEYS`] are rejected. `lr=<rate>` is shorthand for a constant schedule
//! over all epochs.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use swat_core::{LrSchedule, PlanStrategy, SwatMode, TopKScope, TrainConfig};

use crate::error::{io_err, CliError, Result};

pub const KEYS: &[&str] = &[
    "arch",
    "dataset",
    "epochs",
    "batch_size",
    "lr",
    "lr_schedule",
    "warmup_epochs",
    "momentum",
    "weight_decay",
    "nesterov",
    "label_smoothing",
    "seed",
    "sparsity",
    "strategy",
    "scope",
    "period",
    "mode",
    "mask_nonactive_gradients",
    "freeze_topology_epoch",
    "exempt_first",
    "exempt_last",
    "decay_nonactive",
    "train_limit",
    "test_limit",
    "augment",
];

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut c = TrainConfig::default();
    apply(&mut c, text)?;
    Ok(c)
}

/// Applies the assignments in `text` on top of `c`, then validates.
pub fn apply(c: &mut TrainConfig, text: &str) -> Result<()> {
    let mut constant_lr = None;
    let mut schedule_set = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Parse {
                line: i + 1,
                msg: format!("expected key=value, got `{line}`"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(CliError::Parse {
                line: i + 1,
                msg: format!("unknown key `{key}`"),
            });
        }
        match key {
            "lr" => constant_lr = Some(num::<f64>(key, value)?),
            "lr_schedule" => schedule_set = true,
            _ => {}
        }
        set(c, key, value)?;
    }
    if let Some(lr) = constant_lr {
        if schedule_set {
            return Err(invalid("lr", "cannot be combined with lr_schedule"));
        }
        c.lr_schedule = LrSchedule::constant(c.epochs, lr);
    }
    c.validate()?;
    Ok(())
}

/// Sets one key; used for config files and command-line overrides alike.
pub fn set(c: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "arch" => c.arch = value.to_string(),
        "dataset" => c.dataset = value.to_string(),
        "epochs" => c.epochs = num(key, value)?,
        "batch_size" => c.batch_size = num(key, value)?,
        "lr" => c.lr_schedule = LrSchedule::constant(c.epochs, num(key, value)?),
        "lr_schedule" => {
            c.lr_schedule = LrSchedule::parse(value).ok_or_else(|| invalid(key, "expected first-last:rate,..."))?
        }
        "warmup_epochs" => c.warmup_epochs = num(key, value)?,
        "momentum" => c.momentum = num(key, value)?,
        "weight_decay" => c.weight_decay = num(key, value)?,
        "nesterov" => c.nesterov = boolean(key, value)?,
        "label_smoothing" => c.label_smoothing = num(key, value)?,
        "seed" => c.seed = num(key, value)?,
        "sparsity" => c.sparsity = num(key, value)?,
        "strategy" => c.strategy = PlanStrategy::parse(value).ok_or_else(|| invalid(key, "expected uniform, erk or momentum"))?,
        "scope" => c.scope = TopKScope::parse(value).ok_or_else(|| invalid(key, "expected nchw, chw, hw, channel or random"))?,
        "period" => c.period = num(key, value)?,
        "mode" => c.mode = SwatMode::parse(value).ok_or_else(|| invalid(key, &format!("unknown mode `{value}`")))?,
        "mask_nonactive_gradients" => c.ablation.mask_nonactive_gradients = boolean(key, value)?,
        "freeze_topology_epoch" => c.ablation.freeze_topology_epoch = optional(key, value)?,
        "exempt_first" => c.exempt_first = optional_bool(key, value)?,
        "exempt_last" => c.exempt_last = optional_bool(key, value)?,
        "decay_nonactive" => c.decay_nonactive = boolean(key, value)?,
        "train_limit" => c.train_limit = num(key, value)?,
        "test_limit" => c.test_limit = num(key, value)?,
        "augment" => c.augment = boolean(key, value)?,
        _ => return Err(invalid(key, "unknown key")),
    }
    Ok(())
}

/// Every key with its current value; [`parse_config`] reads it back unchanged.
pub fn to_config_text(c: &TrainConfig) -> String {
    let opt = |v: Option<String>| v.unwrap_or_else(|| "auto".into());
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k}={v}");
    };
    kv("arch", c.arch.clone());
    kv("dataset", c.dataset.clone());
    kv("epochs", c.epochs.to_string());
    kv("batch_size", c.batch_size.to_string());
    kv("lr_schedule", c.lr_schedule.to_string());
    kv("warmup_epochs", c.warmup_epochs.to_string());
    kv("momentum", c.momentum.to_string());
    kv("weight_decay", c.weight_decay.to_string());
    kv("nesterov", c.nesterov.to_string());
    kv("label_smoothing", c.label_smoothing.to_string());
    kv("seed", c.seed.to_string());
    kv("sparsity", c.sparsity.to_string());
    kv("strategy", c.strategy.name().into());
    kv("scope", c.scope.name().into());
    kv("period", c.period.to_string());
    kv("mode", c.mode.name().into());
    kv("mask_nonactive_gradients", c.ablation.mask_nonactive_gradients.to_string());
    kv("freeze_topology_epoch", opt(c.ablation.freeze_topology_epoch.map(|e| e.to_string())));
    kv("exempt_first", opt(c.exempt_first.map(|b| b.to_string())));
    kv("exempt_last", opt(c.exempt_last.map(|b| b.to_string())));
    kv("decay_nonactive", c.decay_nonactive.to_string());
    kv("train_limit", c.train_limit.to_string());
    kv("test_limit", c.test_limit.to_string());
    kv("augment", c.augment.to_string());
    s
}

fn invalid(key: &str, msg: &str) -> CliError {
    CliError::InvalidValue {
        key: key.to_string(),
        msg: msg.to_string(),
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| invalid(key, &format!("cannot parse `{value}`")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(invalid(key, &format!("expected a boolean, got `{value}`"))),
    }
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if matches!(value, "auto" | "none" | "") {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}

fn optional_bool(key: &str, value: &str) -> Result<Option<bool>> {
    if matches!(value, "auto" | "none" | "") {
        Ok(None)
    } else {
        boolean(key, value).map(Some)
    }
}
