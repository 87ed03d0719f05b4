//! Periodic threshold caching: thresholds are recomputed every `P` iterations
//! and applied with the strict `|x| > t` rule in between.

use std::collections::BTreeMap;

use crate::error::{Result, SwatError};
use crate::scalar::Scalar;
use crate::sparsify::topk::{channel_l1_norms, check_sparsity, keep_count, keep_threshold, TopKScope};
use crate::tensor::Tensor4;

/// Cached thresholds of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    /// One weight threshold per scope group (per filter for `Chw` and `Channel`).
    pub weight: Vec<f64>,
    /// Activation threshold; activations are always selected over the whole batch.
    pub activation: f64,
    pub last_sample_iter: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdCache {
    period: u64,
    entries: BTreeMap<usize, CacheEntry>,
}

impl ThresholdCache {
    pub fn new(period: u64) -> Result<Self> {
        if period == 0 {
            return Err(SwatError::InvalidConfig("threshold period must be positive".into()));
        }
        Ok(Self {
            period,
            entries: BTreeMap::new(),
        })
    }

    pub fn period(&self) -> u64 {
        self.period
    }

    pub fn get(&self, layer: usize) -> Option<&CacheEntry> {
        self.entries.get(&layer)
    }

    /// Resampling happens when `iter % P == 0`, or when the layer has never been sampled.
    pub fn is_due(&self, layer: usize, iter: u64) -> bool {
        iter % self.period == 0 || !self.entries.contains_key(&layer)
    }

    /// Cached entries in layer order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, &CacheEntry)> {
        self.entries.iter().map(|(&l, e)| (l, e))
    }

    pub fn insert(&mut self, layer: usize, entry: CacheEntry) {
        self.entries.insert(layer, entry);
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Recomputes the thresholds of `layer` if due; returns whether it did.
    pub fn cache_thresholds<T: Scalar>(
        &mut self,
        layer: usize,
        weight: &Tensor4<T>,
        weight_scope: TopKScope,
        activation: &Tensor4<T>,
        sparsity: f64,
        iter: u64,
    ) -> Result<bool> {
        if !self.is_due(layer, iter) {
            return Ok(false);
        }
        let entry = CacheEntry {
            weight: weight_thresholds(weight, sparsity, weight_scope)?,
            activation: activation_threshold(activation, sparsity)?,
            last_sample_iter: iter,
        };
        self.entries.insert(layer, entry);
        Ok(true)
    }
}

/// Per-group thresholds that reproduce an exact Top-K of `weight` under the
/// strict keep rule when there are no ties.
pub fn weight_thresholds<T: Scalar>(weight: &Tensor4<T>, sparsity: f64, scope: TopKScope) -> Result<Vec<f64>> {
    check_sparsity(sparsity)?;
    match scope {
        TopKScope::Channel => {
            let s = weight.shape();
            let k = keep_count(s.c, sparsity);
            let norms = channel_l1_norms(weight);
            let mut scratch = Vec::with_capacity(s.c);
            Ok(norms.chunks_exact(s.c.max(1)).map(|row| keep_threshold(row, k, &mut scratch)).collect())
        }
        TopKScope::Random => Err(SwatError::InvalidScope {
            scope: "random",
            reason: "random masks have no threshold".into(),
        }),
        _ => {
            let group = scope.group_len(weight.shape())?.max(1);
            let k = keep_count(group, sparsity);
            let mut scratch = Vec::with_capacity(group);
            Ok(weight
                .data()
                .chunks_exact(group)
                .map(|g| keep_threshold(g, k, &mut scratch))
                .collect())
        }
    }
}

pub fn activation_threshold<T: Scalar>(activation: &Tensor4<T>, sparsity: f64) -> Result<f64> {
    check_sparsity(sparsity)?;
    let k = keep_count(activation.len(), sparsity);
    let mut scratch = Vec::with_capacity(activation.len());
    Ok(keep_threshold(activation.data(), k, &mut scratch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparsify::topk::{threshold_apply_grouped, topk_exact, topk_threshold_apply};
    use crate::tensor::Shape4;

    fn t(n: usize, seed: usize) -> Tensor4<f64> {
        Tensor4::from_fn(Shape4::new(2, 3, 2, n), |i| (((i + seed) * 7919) % 997) as f64 / 97.0 - 5.0)
    }

    #[test]
    fn period_one_resamples_every_iteration() {
        let mut c = ThresholdCache::new(1).unwrap();
        for it in 0..5 {
            assert!(c.cache_thresholds(0, &t(3, it as usize), TopKScope::Nchw, &t(3, 1), 0.5, it).unwrap());
            assert_eq!(c.get(0).unwrap().last_sample_iter, it);
        }
    }

    #[test]
    fn period_hundred_skips_iteration_fifty() {
        let mut c = ThresholdCache::new(100).unwrap();
        assert!(c.cache_thresholds(3, &t(3, 0), TopKScope::Nchw, &t(3, 1), 0.9, 0).unwrap());
        let before = c.clone();
        assert!(!c.cache_thresholds(3, &t(3, 5), TopKScope::Nchw, &t(3, 6), 0.9, 50).unwrap());
        assert_eq!(c, before);
        assert!(c.cache_thresholds(3, &t(3, 5), TopKScope::Nchw, &t(3, 6), 0.9, 100).unwrap());
    }

    #[test]
    fn resampled_threshold_matches_exact_topk() {
        let w = t(5, 3);
        for s in [0.0, 0.3, 0.5, 0.9] {
            let th = weight_thresholds(&w, s, TopKScope::Nchw).unwrap();
            let (a, _) = topk_threshold_apply(&w, th[0]).unwrap();
            let (b, _) = topk_exact(&w, s, TopKScope::Nchw).unwrap();
            assert_eq!(a, b, "sparsity {s}");
            let th = weight_thresholds(&w, s, TopKScope::Chw).unwrap();
            assert_eq!(th.len(), 2);
            let a = threshold_apply_grouped(&w, &th, w.shape().sample_len()).unwrap();
            let (b, _) = topk_exact(&w, s, TopKScope::Chw).unwrap();
            assert_eq!(a.tensor, b);
        }
    }

    #[test]
    fn zero_period_rejected() {
        assert!(ThresholdCache::new(0).is_err());
    }
}
