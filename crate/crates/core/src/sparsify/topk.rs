//! Fine-grained and channel-wise Top-K sparsifying functions.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SwatError};
use crate::scalar::Scalar;
use crate::sparsify::select::kth_in_place;
use crate::tensor::{Shape4, Tensor4};

/// Partition of a tensor within which the K largest magnitudes are selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TopKScope {
    /// Whole tensor.
    Nchw,
    /// Per sample (activations) or per filter (weights).
    Chw,
    /// Per `(n, c)` plane.
    Hw,
    /// Per filter, whole input channels ranked by L1 norm. Weights only.
    Channel,
    /// Uniformly random survivors; a baseline, not a Top-K.
    Random,
}

impl TopKScope {
    pub fn name(&self) -> &'static str {
        match self {
            TopKScope::Nchw => "nchw",
            TopKScope::Chw => "chw",
            TopKScope::Hw => "hw",
            TopKScope::Channel => "channel",
            TopKScope::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().as_str() {
            "nchw" => TopKScope::Nchw,
            "chw" => TopKScope::Chw,
            "hw" => TopKScope::Hw,
            "channel" => TopKScope::Channel,
            "random" => TopKScope::Random,
            _ => return None,
        })
    }

    /// Number of contiguous elements per selection group for fine-grained scopes.
    pub fn group_len(&self, shape: Shape4) -> Result<usize> {
        match self {
            TopKScope::Nchw | TopKScope::Random => Ok(shape.len()),
            TopKScope::Chw => Ok(shape.sample_len()),
            TopKScope::Hw => Ok(shape.plane()),
            TopKScope::Channel => Err(SwatError::InvalidScope {
                scope: "channel",
                reason: "channel selection ranks whole channels; use channel_topk".into(),
            }),
        }
    }
}

impl fmt::Display for TopKScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

/// Outcome of one sparsification: how many elements the mask kept and zeroed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsifyReport {
    pub kept_count: usize,
    pub zeroed_count: usize,
    pub realized_sparsity: f64,
}

impl SparsifyReport {
    pub fn new(kept_count: usize, zeroed_count: usize) -> Self {
        let total = kept_count + zeroed_count;
        Self {
            kept_count,
            zeroed_count,
            realized_sparsity: if total == 0 { 0.0 } else { zeroed_count as f64 / total as f64 },
        }
    }

    /// Report for a tensor passed through untouched.
    pub fn dense(total: usize) -> Self {
        Self::new(total, 0)
    }

    pub fn total(&self) -> usize {
        self.kept_count + self.zeroed_count
    }

    pub fn from_mask(mask: &[bool]) -> Self {
        let kept = mask.iter().filter(|&&m| m).count();
        Self::new(kept, mask.len() - kept)
    }
}

/// Sparsified tensor together with its keep-mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sparsified<T> {
    pub tensor: Tensor4<T>,
    pub mask: Vec<bool>,
    pub report: SparsifyReport,
}

pub(crate) fn check_sparsity(sparsity: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&sparsity) || sparsity.is_nan() {
        return Err(SwatError::InvalidSparsity(sparsity));
    }
    Ok(())
}

/// Elements retained in a group of `len` at `sparsity`: `round((1 - s)·len)`,
/// half rounded up, at least one unless `s == 1`.
pub fn keep_count(len: usize, sparsity: f64) -> usize {
    if len == 0 {
        return 0;
    }
    if sparsity >= 1.0 {
        return 0;
    }
    let k = ((1.0 - sparsity) * len as f64 + 0.5 + 1e-9).floor() as usize;
    k.clamp(1, len)
}

/// Keeps exactly `k` largest magnitudes of `src`, lowest index first among ties.
fn topk_group<T: Scalar>(src: &[T], k: usize, dst: &mut [T], mask: &mut [bool], scratch: &mut Vec<T>) {
    let len = src.len();
    if k >= len {
        dst.copy_from_slice(src);
        mask.iter_mut().for_each(|m| *m = true);
        return;
    }
    if k == 0 {
        dst.iter_mut().for_each(|v| *v = T::zero());
        mask.iter_mut().for_each(|m| *m = false);
        return;
    }
    scratch.clear();
    scratch.extend(src.iter().map(|v| v.abs()));
    let t = kth_in_place(scratch, k);
    let above = src.iter().filter(|v| v.abs() > t).count();
    let mut ties = k - above;
    for ((&v, d), m) in src.iter().zip(dst.iter_mut()).zip(mask.iter_mut()) {
        let a = v.abs();
        let keep = if a > t {
            true
        } else if a == t && ties > 0 {
            ties -= 1;
            true
        } else {
            false
        };
        *m = keep;
        *d = if keep { v } else { T::zero() };
    }
}

/// Exact Top-K within each scope group, returning the keep-mask as well.
pub fn topk_exact_masked<T: Scalar>(tensor: &Tensor4<T>, sparsity: f64, scope: TopKScope) -> Result<Sparsified<T>> {
    check_sparsity(sparsity)?;
    if scope == TopKScope::Random {
        return Err(SwatError::InvalidScope {
            scope: "random",
            reason: "random selection is not a Top-K; use random_mask".into(),
        });
    }
    let group = scope.group_len(tensor.shape())?;
    let mut out = Tensor4::zeros(tensor.shape());
    let mut mask = vec![false; tensor.len()];
    if group > 0 {
        let k = keep_count(group, sparsity);
        let mut scratch = Vec::with_capacity(group);
        for ((src, dst), m) in tensor
            .data()
            .chunks_exact(group)
            .zip(out.data_mut().chunks_exact_mut(group))
            .zip(mask.chunks_exact_mut(group))
        {
            topk_group(src, k, dst, m, &mut scratch);
        }
    }
    let report = SparsifyReport::from_mask(&mask);
    Ok(Sparsified { tensor: out, mask, report })
}

/// Exact Top-K: within each scope group keeps `keep_count(group, sparsity)`
/// elements of largest magnitude and zeroes the rest.
pub fn topk_exact<T: Scalar>(tensor: &Tensor4<T>, sparsity: f64, scope: TopKScope) -> Result<(Tensor4<T>, SparsifyReport)> {
    let s = topk_exact_masked(tensor, sparsity, scope)?;
    Ok((s.tensor, s.report))
}

/// Zeroes every element with `|x| <= threshold`.
pub fn topk_threshold_apply<T: Scalar>(tensor: &Tensor4<T>, threshold: f64) -> Result<(Tensor4<T>, SparsifyReport)> {
    let s = threshold_apply_grouped(tensor, &[threshold], tensor.len().max(1))?;
    Ok((s.tensor, s.report))
}

/// Threshold rule applied per contiguous group, one threshold per group.
pub fn threshold_apply_grouped<T: Scalar>(
    tensor: &Tensor4<T>,
    thresholds: &[f64],
    group_len: usize,
) -> Result<Sparsified<T>> {
    if let Some(&bad) = thresholds.iter().find(|t| !(**t >= 0.0)) {
        return Err(SwatError::NegativeThreshold(bad));
    }
    let groups = if tensor.is_empty() { 0 } else { tensor.len() / group_len };
    if groups * group_len != tensor.len() || (groups > 0 && thresholds.len() != groups) {
        return Err(SwatError::LengthMismatch {
            op: "threshold groups",
            expected: groups,
            actual: thresholds.len(),
        });
    }
    let mut out = Tensor4::zeros(tensor.shape());
    let mut mask = vec![false; tensor.len()];
    for (((src, dst), m), &t) in tensor
        .data()
        .chunks_exact(group_len.max(1))
        .zip(out.data_mut().chunks_exact_mut(group_len.max(1)))
        .zip(mask.chunks_exact_mut(group_len.max(1)))
        .zip(thresholds)
    {
        let t = T::of_f64(t);
        for ((&v, d), k) in src.iter().zip(dst.iter_mut()).zip(m.iter_mut()) {
            *k = v.abs() > t;
            *d = if *k { v } else { T::zero() };
        }
    }
    let report = SparsifyReport::from_mask(&mask);
    Ok(Sparsified { tensor: out, mask, report })
}

/// Per-filter channel L1 norms of a `F x C x R x S` weight, laid out `F x C`.
pub fn channel_l1_norms<T: Scalar>(weight: &Tensor4<T>) -> Vec<f64> {
    let plane = weight.shape().plane();
    weight
        .data()
        .chunks_exact(plane.max(1))
        .map(|ch| ch.iter().map(|v| v.abs().as_f64()).sum())
        .collect()
}

/// Expands an `F x C` channel mask to an element mask over `F x C x R x S`.
fn expand_channel_mask<T: Scalar>(weight: &Tensor4<T>, channel_mask: &[bool]) -> Sparsified<T> {
    let plane = weight.shape().plane();
    let mut out = Tensor4::zeros(weight.shape());
    let mut mask = vec![false; weight.len()];
    for (((src, dst), m), &keep) in weight
        .data()
        .chunks_exact(plane)
        .zip(out.data_mut().chunks_exact_mut(plane))
        .zip(mask.chunks_exact_mut(plane))
        .zip(channel_mask)
    {
        if keep {
            dst.copy_from_slice(src);
            m.iter_mut().for_each(|v| *v = true);
        }
    }
    let report = SparsifyReport::from_mask(&mask);
    Sparsified { tensor: out, mask, report }
}

fn check_channel_input<T: Scalar>(weight: &Tensor4<T>, sparsity: f64) -> Result<()> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(SwatError::InvalidSparsity(sparsity));
    }
    if weight.shape().c < 1 || weight.shape().plane() < 1 {
        return Err(SwatError::InvalidScope {
            scope: "channel",
            reason: format!("weight {} has no channels", weight.shape()),
        });
    }
    Ok(())
}

/// Structured Top-K: each filter independently keeps its
/// `keep_count(C, sparsity)` input channels of largest L1 norm.
///
/// Returns the sparse weight, the `F x C` active-channel mask and the report.
pub fn channel_topk<T: Scalar>(weight: &Tensor4<T>, sparsity: f64) -> Result<(Tensor4<T>, Vec<bool>, SparsifyReport)> {
    let (s, channels) = channel_topk_masked(weight, sparsity)?;
    Ok((s.tensor, channels, s.report))
}

pub(crate) fn channel_topk_masked<T: Scalar>(weight: &Tensor4<T>, sparsity: f64) -> Result<(Sparsified<T>, Vec<bool>)> {
    check_channel_input(weight, sparsity)?;
    let c = weight.shape().c;
    let k = keep_count(c, sparsity);
    let norms = channel_l1_norms(weight);
    let mut channel_mask = vec![false; norms.len()];
    let mut dst = vec![0.0f64; c];
    let mut scratch = Vec::with_capacity(c);
    for (row, m) in norms.chunks_exact(c).zip(channel_mask.chunks_exact_mut(c)) {
        topk_group(row, k, &mut dst, m, &mut scratch);
    }
    Ok((expand_channel_mask(weight, &channel_mask), channel_mask))
}

/// Channel rule with cached per-filter thresholds: a channel survives when its L1 norm exceeds the threshold.
pub fn channel_threshold_apply<T: Scalar>(weight: &Tensor4<T>, thresholds: &[f64]) -> Result<Sparsified<T>> {
    let s = weight.shape();
    if thresholds.len() != s.n {
        return Err(SwatError::LengthMismatch {
            op: "channel thresholds",
            expected: s.n,
            actual: thresholds.len(),
        });
    }
    if let Some(&bad) = thresholds.iter().find(|t| !(**t >= 0.0)) {
        return Err(SwatError::NegativeThreshold(bad));
    }
    let norms = channel_l1_norms(weight);
    let channel_mask: Vec<bool> = norms
        .iter()
        .enumerate()
        .map(|(i, &n)| n > thresholds[i / s.c])
        .collect();
    Ok(expand_channel_mask(weight, &channel_mask))
}

/// Keeps a uniformly random subset of exactly `keep_count(len, sparsity)` elements.
pub fn random_mask<T: Scalar>(tensor: &Tensor4<T>, sparsity: f64, seed: u64) -> Result<Tensor4<T>> {
    Ok(random_mask_masked(tensor, sparsity, seed)?.tensor)
}

pub fn random_mask_masked<T: Scalar>(tensor: &Tensor4<T>, sparsity: f64, seed: u64) -> Result<Sparsified<T>> {
    check_sparsity(sparsity)?;
    let n = tensor.len();
    let k = keep_count(n, sparsity);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; n];
    for i in sample(&mut rng, n, k).iter() {
        mask[i] = true;
    }
    let mut out = Tensor4::zeros(tensor.shape());
    for ((d, &v), &m) in out.data_mut().iter_mut().zip(tensor.data()).zip(&mask) {
        if m {
            *d = v;
        }
    }
    let report = SparsifyReport::from_mask(&mask);
    Ok(Sparsified { tensor: out, mask, report })
}

/// Angle between `v` and its masked copy: `arccos(‖masked‖ / ‖v‖)`.
pub fn sparsification_angle(v: &[f64], masked: &[f64]) -> Result<f64> {
    if v.len() != masked.len() {
        return Err(SwatError::LengthMismatch {
            op: "sparsification_angle",
            expected: v.len(),
            actual: masked.len(),
        });
    }
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nv == 0.0 {
        return Err(SwatError::ZeroNorm);
    }
    let nm = masked.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok((nm / nv).clamp(0.0, 1.0).acos())
}

/// Threshold that reproduces a keep-`k` selection under the strict `|x| > t` rule:
/// the largest magnitude outside the top `k` (0 when everything is kept).
pub(crate) fn keep_threshold<T: Scalar>(values: &[T], k: usize, scratch: &mut Vec<T>) -> f64 {
    if k >= values.len() {
        return 0.0;
    }
    scratch.clear();
    scratch.extend(values.iter().map(|v| v.abs()));
    kth_in_place(scratch, k + 1).as_f64()
}
