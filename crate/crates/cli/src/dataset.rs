//! MNIST (IDX) and CIFAR-10 (binary batch) readers.

use std::path::{Path, PathBuf};

use swat_core::{Dataset, Shape4};

use crate::error::{io_err, CliError, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Raw 8-bit images before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImages {
    pub sample: Shape4,
    pub pixels: Vec<u8>,
    pub labels: Vec<usize>,
}

fn format_err(path: &Path, msg: impl Into<String>) -> CliError {
    CliError::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(io_err(path))
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// `(count, rows, cols, pixels)` from an IDX3 image file.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read(path)?;
    if bytes.len() < 16 {
        return Err(format_err(path, "truncated IDX header"));
    }
    let magic = be_u32(&bytes, 0);
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(path, format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let (n, rows, cols) = (be_u32(&bytes, 4) as usize, be_u32(&bytes, 8) as usize, be_u32(&bytes, 12) as usize);
    let body = &bytes[16..];
    if body.len() < n * rows * cols {
        return Err(format_err(path, format!("truncated: {} of {} pixel bytes", body.len(), n * rows * cols)));
    }
    Ok((n, rows, cols, body[..n * rows * cols].to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = read(path)?;
    if bytes.len() < 8 {
        return Err(format_err(path, "truncated IDX header"));
    }
    let magic = be_u32(&bytes, 0);
    if magic != IDX_LABELS_MAGIC {
        return Err(format_err(path, format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let n = be_u32(&bytes, 4) as usize;
    if bytes.len() - 8 < n {
        return Err(format_err(path, format!("truncated: {} of {n} labels", bytes.len() - 8)));
    }
    Ok(bytes[8..8 + n].iter().map(|&b| b as usize).collect())
}

fn mnist_split(dir: &Path, prefix: &str) -> Result<RawImages> {
    let img = dir.join(format!("{prefix}-images-idx3-ubyte"));
    let lbl = dir.join(format!("{prefix}-labels-idx1-ubyte"));
    let (n, rows, cols, pixels) = read_idx_images(&img)?;
    let labels = read_idx_labels(&lbl)?;
    if labels.len() != n {
        return Err(format_err(&lbl, format!("{} labels for {n} images", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= 10) {
        return Err(format_err(&lbl, format!("label {bad} out of range")));
    }
    Ok(RawImages {
        sample: Shape4::new(1, 1, rows, cols),
        pixels,
        labels,
    })
}

/// Train and test splits from the four standard IDX files in `dir`.
pub fn load_mnist_raw(dir: &Path) -> Result<(RawImages, RawImages)> {
    Ok((mnist_split(dir, "train")?, mnist_split(dir, "t10k")?))
}

/// One CIFAR-10 binary batch: records of a label byte followed by 3072 CHW pixel bytes.
pub fn read_cifar_batch(path: &Path) -> Result<RawImages> {
    let bytes = read(path)?;
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(format_err(
            path,
            format!("truncated record: {} bytes is not a multiple of {CIFAR_RECORD}", bytes.len()),
        ));
    }
    let mut pixels = Vec::with_capacity(bytes.len());
    let mut labels = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        if rec[0] >= 10 {
            return Err(format_err(path, format!("label {} out of range", rec[0])));
        }
        labels.push(rec[0] as usize);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok(RawImages {
        sample: Shape4::new(1, 3, 32, 32),
        pixels,
        labels,
    })
}

fn cifar_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// `data_batch_1..5.bin` and `test_batch.bin` from `dir` or its `cifar-10-batches-bin` subdirectory.
pub fn load_cifar10_raw(dir: &Path) -> Result<(RawImages, RawImages)> {
    let dir = cifar_dir(dir);
    let mut train = read_cifar_batch(&dir.join("data_batch_1.bin"))?;
    for i in 2..=5 {
        let b = read_cifar_batch(&dir.join(format!("data_batch_{i}.bin")))?;
        train.pixels.extend(b.pixels);
        train.labels.extend(b.labels);
    }
    Ok((train, read_cifar_batch(&dir.join("test_batch.bin"))?))
}

/// Per-channel mean and standard deviation of `raw` in the `[0, 1]` pixel scale.
pub fn channel_stats(raw: &RawImages) -> Vec<(f64, f64)> {
    let s = raw.sample;
    let plane = s.h * s.w;
    (0..s.c)
        .map(|c| {
            let (mut sum, mut sq, mut n) = (0.0, 0.0, 0usize);
            for img in raw.pixels.chunks_exact(s.len()) {
                for &p in &img[c * plane..(c + 1) * plane] {
                    let v = p as f64 / 255.0;
                    sum += v;
                    sq += v * v;
                    n += 1;
                }
            }
            let mean = sum / n.max(1) as f64;
            let var = (sq / n.max(1) as f64 - mean * mean).max(0.0);
            (mean, var.sqrt().max(1e-8))
        })
        .collect()
}

pub fn normalize(raw: &RawImages, stats: &[(f64, f64)], classes: usize) -> Result<Dataset> {
    let s = raw.sample;
    let plane = s.h * s.w;
    let images = raw
        .pixels
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let (mean, std) = stats[(i % s.len()) / plane];
            ((p as f64 / 255.0 - mean) / std) as f32
        })
        .collect();
    Ok(Dataset::new(s, images, raw.labels.clone(), classes)?)
}

/// Train and test sets of `name` (`mnist` or `cifar10`), normalized with
/// training-set channel statistics and truncated to the limits (0 keeps all).
pub fn load_dataset(name: &str, dir: &Path, train_limit: usize, test_limit: usize) -> Result<(Dataset, Dataset)> {
    let (train, test) = match name {
        "mnist" => load_mnist_raw(dir)?,
        "cifar10" | "cifar-10" => load_cifar10_raw(dir)?,
        other => {
            return Err(CliError::InvalidValue {
                key: "dataset".into(),
                msg: format!("unknown dataset `{other}` (expected mnist or cifar10)"),
            })
        }
    };
    let stats = channel_stats(&train);
    let mut train = normalize(&train, &stats, 10)?;
    let mut test = normalize(&test, &stats, 10)?;
    if train_limit > 0 {
        train = train.truncated(train_limit);
    }
    if test_limit > 0 {
        test = test.truncated(test_limit);
    }
    Ok((train, test))
}
