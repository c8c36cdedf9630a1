//! Intra-instance pruning (point and chunk dropping) and adaptive time masking.
//!
//! Dropping shortens a sequence and so reduces compute; masking zeroes runs of
//! samples in place and never changes the length.

use std::ops::Range;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::AudioInstance;
use crate::error::{Error, Result};
use crate::selection::round_half_up;

pub const DEFAULT_CHUNK_LEN: usize = 160;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropMode {
    Point,
    Chunk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropSpec {
    pub mode: DropMode,
    pub time_kept_ratio: f64,
    #[serde(default = "default_chunk_len")]
    pub chunk_len: usize,
}

fn default_chunk_len() -> usize {
    DEFAULT_CHUNK_LEN
}

impl DropSpec {
    pub fn chunk(time_kept_ratio: f64, chunk_len: usize) -> Self {
        Self {
            mode: DropMode::Chunk,
            time_kept_ratio,
            chunk_len,
        }
    }

    pub fn point(time_kept_ratio: f64) -> Self {
        Self {
            mode: DropMode::Point,
            time_kept_ratio,
            chunk_len: DEFAULT_CHUNK_LEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.time_kept_ratio > 0.0 && self.time_kept_ratio <= 1.0) {
            return Err(Error::Validation(format!(
                "time_kept_ratio must lie in (0, 1], got {}",
                self.time_kept_ratio
            )));
        }
        if self.chunk_len == 0 {
            return Err(Error::Validation("chunk_len must be at least 1".into()));
        }
        Ok(())
    }

    /// Target kept length `L = round(ratio * T)`, clamped to `[1, T]`.
    pub fn target_len(&self, total: usize) -> usize {
        round_half_up(self.time_kept_ratio * total as f64).clamp(1, total.max(1))
    }

    /// Kept source indices for a sequence of length `total`.
    pub fn kept_indices<R: Rng + ?Sized>(&self, total: usize, rng: &mut R) -> Result<Vec<usize>> {
        match self.mode {
            DropMode::Point => point_kept_indices(total, self.target_len(total), rng),
            DropMode::Chunk => Ok(chunk_kept_ranges(total, capped_chunk_count(self, total), self.chunk_len, rng)?
                .into_iter()
                .flatten()
                .collect()),
        }
    }

    /// Drops samples from `instance` and re-derives its frame labels.
    pub fn apply<R: Rng + ?Sized>(&self, instance: &AudioInstance, rng: &mut R) -> Result<AudioInstance> {
        self.apply_into(instance, rng, Vec::new())
    }

    /// As [`DropSpec::apply`], writing the kept samples into `buf` (cleared
    /// first) so callers can recycle allocations.
    pub fn apply_into<R: Rng + ?Sized>(
        &self,
        instance: &AudioInstance,
        rng: &mut R,
        buf: Vec<f32>,
    ) -> Result<AudioInstance> {
        let total = instance.len();
        match self.mode {
            DropMode::Point => {
                let kept = point_kept_indices(total, self.target_len(total), rng)?;
                instance.select_samples_into(&kept, buf)
            }
            DropMode::Chunk => {
                let c = capped_chunk_count(self, total);
                instance.select_ranges_into(&chunk_kept_ranges(total, c, self.chunk_len, rng)?, buf)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    #[serde(default = "default_mask_len")]
    pub max_mask_len_s: f64,
    #[serde(default = "default_masks_per_second")]
    pub masks_per_second: f64,
}

fn default_mask_len() -> f64 {
    0.4
}

fn default_masks_per_second() -> f64 {
    1.0
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            max_mask_len_s: default_mask_len(),
            masks_per_second: default_masks_per_second(),
        }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.max_mask_len_s > 0.0 && self.masks_per_second > 0.0 {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "mask spec fields must be positive, got {self:?}"
            )))
        }
    }

    /// Longest mask in samples at `sample_rate` (at least 1).
    pub fn max_run(&self, sample_rate: u32) -> usize {
        ((self.max_mask_len_s * f64::from(sample_rate)).floor() as usize).max(1)
    }

    pub fn mask_count(&self, duration_s: f64) -> usize {
        round_half_up(self.masks_per_second * duration_s)
    }
}

fn check_target(total: usize, target: usize) -> Result<()> {
    if target < 1 || target > total {
        return Err(Error::Argument(format!(
            "kept length {target} must lie in [1, {total}]"
        )));
    }
    Ok(())
}

fn point_kept_indices<R: Rng + ?Sized>(total: usize, target: usize, rng: &mut R) -> Result<Vec<usize>> {
    check_target(total, target)?;
    if target == total {
        return Ok((0..total).collect());
    }
    let mut kept = index::sample(rng, total, target).into_vec();
    kept.sort_unstable();
    Ok(kept)
}

/// `c = round((T - L) / n)` with halves rounding up.
pub fn chunk_count(total: usize, target: usize, chunk_len: usize) -> usize {
    let removed = total.saturating_sub(target);
    (2 * removed + chunk_len) / (2 * chunk_len)
}

/// Start offsets of `c` disjoint chunks of length `n` in `[0, T)`, uniform over
/// all non-overlapping arrangements.
///
/// Gap construction: a uniform multiset `u_1 <= ... <= u_c` from
/// `{0..=T - c n}` is obtained by sampling `c` distinct values from
/// `{0..T - c n + c}` and subtracting each value's rank; chunk `i` then starts
/// at `u_i + i n`.
pub fn chunk_starts<R: Rng + ?Sized>(total: usize, c: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Argument("chunk length must be at least 1".into()));
    }
    let removed = c
        .checked_mul(n)
        .filter(|&r| r <= total)
        .ok_or_else(|| {
            Error::Argument(format!("{c} chunks of {n} samples exceed length {total}"))
        })?;
    if c == 0 {
        return Ok(Vec::new());
    }
    let free = total - removed;
    let mut picks = index::sample(rng, free + c, c).into_vec();
    picks.sort_unstable();
    Ok(picks
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v - i) + i * n)
        .collect())
}

fn chunk_kept_ranges<R: Rng + ?Sized>(total: usize, c: usize, n: usize, rng: &mut R) -> Result<Vec<Range<usize>>> {
    let starts = chunk_starts(total, c, n, rng)?;
    let mut kept = Vec::with_capacity(c + 1);
    let mut cursor = 0;
    for s in starts {
        if s > cursor {
            kept.push(cursor..s);
        }
        cursor = s + n;
    }
    if total > cursor {
        kept.push(cursor..total);
    }
    Ok(kept)
}

fn capped_chunk_count(spec: &DropSpec, total: usize) -> usize {
    // Never remove the whole instance: cap c so at least one sample survives.
    chunk_count(total, spec.target_len(total), spec.chunk_len).min(total.saturating_sub(1) / spec.chunk_len)
}

/// Retains a uniform random `L`-subset of the samples, order preserved.
pub fn drop_points<T: Copy, R: Rng + ?Sized>(samples: &[T], target: usize, rng: &mut R) -> Result<Vec<T>> {
    Ok(point_kept_indices(samples.len(), target, rng)?
        .into_iter()
        .map(|i| samples[i])
        .collect())
}

/// Removes `round((T - L) / n)` disjoint runs of `n` consecutive samples.
pub fn drop_chunks<T: Copy, R: Rng + ?Sized>(
    samples: &[T],
    target: usize,
    chunk_len: usize,
    rng: &mut R,
) -> Result<Vec<T>> {
    let total = samples.len();
    check_target(total, target)?;
    if chunk_len == 0 {
        return Err(Error::Argument("chunk length must be at least 1".into()));
    }
    let c = chunk_count(total, target, chunk_len);
    let mut out = Vec::with_capacity(total - (c * chunk_len).min(total));
    for r in chunk_kept_ranges(total, c, chunk_len, rng)? {
        out.extend_from_slice(&samples[r]);
    }
    Ok(out)
}

/// Zeroes `round(masks_per_second * duration)` runs, each of uniform length in
/// `[1, max_run]` at a uniform start. Masks may overlap.
pub fn mask_time_adaptive<R: Rng + ?Sized>(
    samples: &[f32],
    sample_rate: u32,
    spec: &MaskSpec,
    rng: &mut R,
) -> Vec<f32> {
    let mut out = samples.to_vec();
    mask_in_place(&mut out, sample_rate, spec, rng);
    out
}

/// [`mask_time_adaptive`] without the copy.
pub fn mask_in_place<R: Rng + ?Sized>(samples: &mut [f32], sample_rate: u32, spec: &MaskSpec, rng: &mut R) {
    let total = samples.len();
    if total == 0 || sample_rate == 0 {
        return;
    }
    let count = spec.mask_count(total as f64 / f64::from(sample_rate));
    let max_run = spec.max_run(sample_rate).min(total);
    for _ in 0..count {
        let len = rng.random_range(1..=max_run);
        let start = rng.random_range(0..=total - len);
        samples[start..start + len].fill(0.0);
    }
}

pub fn mask_instance<R: Rng + ?Sized>(instance: &AudioInstance, spec: &MaskSpec, rng: &mut R) -> Result<AudioInstance> {
    let mut out = instance.clone();
    mask_instance_in_place(&mut out, spec, rng);
    Ok(out)
}

pub fn mask_instance_in_place<R: Rng + ?Sized>(instance: &mut AudioInstance, spec: &MaskSpec, rng: &mut R) {
    let rate = instance.sample_rate();
    mask_in_place(instance.samples_mut(), rate, spec, rng);
}
