//! K-th largest magnitude selection.

use std::cmp::Ordering;

use crate::error::{Result, SwatError};
use crate::scalar::Scalar;

#[inline]
fn desc<T: Scalar>(a: &T, b: &T) -> Ordering {
    b.partial_cmp(a).unwrap_or(Ordering::Equal)
}

/// Magnitude of the `k`-th largest `|value|` (1-based).
///
/// Average linear time: partitions a scratch copy of the magnitudes with the
/// standard library's introselect rather than sorting.
pub fn kth_magnitude<T: Scalar>(values: &[T], k: usize) -> Result<T> {
    if k == 0 || k > values.len() {
        return Err(SwatError::KOutOfRange { k, len: values.len() });
    }
    let mut mags: Vec<T> = values.iter().map(|v| v.abs()).collect();
    Ok(kth_in_place(&mut mags, k))
}

/// Like [`kth_magnitude`] on values that are already non-negative; reorders `mags`.
pub(crate) fn kth_in_place<T: Scalar>(mags: &mut [T], k: usize) -> T {
    debug_assert!(k >= 1 && k <= mags.len());
    let (_, kth, _) = mags.select_nth_unstable_by(k - 1, desc);
    *kth
}
