//! In-memory labelled image sets and batch assembly.

use rand::Rng;

use crate::error::{Result, SwatError};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Training-time augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Augment {
    #[default]
    None,
    /// Random crop after zero padding by `pad` pixels, then random horizontal flip.
    CropFlip { pad: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Per-sample shape (`n = 1`).
    pub sample: Shape4,
    /// `len() · sample.len()` normalized pixels.
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub augment: Augment,
}

impl Dataset {
    pub fn new(sample: Shape4, images: Vec<f32>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let sample = Shape4::new(1, sample.c, sample.h, sample.w);
        if images.len() != labels.len() * sample.len() {
            return Err(SwatError::LengthMismatch {
                op: "dataset images",
                expected: labels.len() * sample.len(),
                actual: images.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(SwatError::TargetOutOfRange { target: bad, classes });
        }
        Ok(Self {
            sample,
            images,
            labels,
            classes,
            augment: Augment::None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `n` samples.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            sample: self.sample,
            images: self.images[..n * self.sample.len()].to_vec(),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
            augment: self.augment,
        }
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let l = self.sample.len();
        &self.images[i * l..(i + 1) * l]
    }

    /// Batch of the given samples without augmentation.
    pub fn batch<T: Scalar>(&self, idx: &[usize]) -> (Tensor4<T>, Vec<usize>) {
        let s = self.sample;
        let mut data = Vec::with_capacity(idx.len() * s.len());
        for &i in idx {
            data.extend(self.image(i).iter().map(|&v| T::of_f64(v as f64)));
        }
        let shape = Shape4::new(idx.len(), s.c, s.h, s.w);
        let t = Tensor4::from_vec(shape, data).expect("batch length matches shape");
        (t, idx.iter().map(|&i| self.labels[i]).collect())
    }

    /// Batch with this dataset's augmentation applied, drawing randomness from `rng`.
    pub fn augmented_batch<T: Scalar, R: Rng>(&self, idx: &[usize], rng: &mut R) -> (Tensor4<T>, Vec<usize>) {
        let Augment::CropFlip { pad } = self.augment else {
            return self.batch(idx);
        };
        let s = self.sample;
        let mut data = vec![T::zero(); idx.len() * s.len()];
        for (b, &i) in idx.iter().enumerate() {
            let dy = rng.random_range(0..=2 * pad) as isize - pad as isize;
            let dx = rng.random_range(0..=2 * pad) as isize - pad as isize;
            let flip = rng.random_bool(0.5);
            let src = self.image(i);
            let dst = &mut data[b * s.len()..(b + 1) * s.len()];
            for c in 0..s.c {
                for y in 0..s.h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= s.h as isize {
                        continue;
                    }
                    for x in 0..s.w {
                        let xx = if flip { s.w - 1 - x } else { x };
                        let sx = xx as isize + dx;
                        if sx < 0 || sx >= s.w as isize {
                            continue;
                        }
                        dst[(c * s.h + y) * s.w + x] = T::of_f64(src[(c * s.h + sy as usize) * s.w + sx as usize] as f64);
                    }
                }
            }
        }
        let shape = Shape4::new(idx.len(), s.c, s.h, s.w);
        let t = Tensor4::from_vec(shape, data).expect("batch length matches shape");
        (t, idx.iter().map(|&i| self.labels[i]).collect())
    }
}
