//! Waveform instances and everything needed to get them into memory.

mod manifest;
mod signal;
mod synth;
mod wav;

pub use manifest::{load_manifest, parse_manifest, InlineSynth, Manifest, ManifestEntry};
pub use signal::{resample_instance, resample_linear, z_normalize};
pub use synth::{class_frequency_hz, generate_synthetic, generate_synthetic_strata, Stratum, SyntheticSpec};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav};

use std::ops::Range;

use crate::error::{Error, Result};

pub const DEFAULT_FRAME_LEN: usize = 160;

/// Number of label frames covering `n_samples` samples.
pub fn frame_count(n_samples: usize, frame_len: usize) -> usize {
    n_samples.div_ceil(frame_len)
}

/// One training or test utterance: raw samples plus one class token per frame.
///
/// Immutable after construction; derived instances (truncated, dropped,
/// resampled) are new values.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioInstance {
    id: String,
    samples: Vec<f32>,
    sample_rate: u32,
    labels: Vec<u32>,
    frame_len: usize,
}

impl AudioInstance {
    pub fn new(
        id: impl Into<String>,
        samples: Vec<f32>,
        sample_rate: u32,
        labels: Vec<u32>,
        frame_len: usize,
    ) -> Result<Self> {
        let id = id.into();
        if samples.is_empty() {
            return Err(Error::Validation(format!("instance '{id}' has no samples")));
        }
        if sample_rate == 0 {
            return Err(Error::Validation(format!("instance '{id}' has sample rate 0")));
        }
        if frame_len == 0 {
            return Err(Error::Validation("frame length must be positive".into()));
        }
        if let Some(bad) = samples.iter().find(|s| !s.is_finite()) {
            return Err(Error::Validation(format!(
                "instance '{id}' has non-finite sample {bad}"
            )));
        }
        let expected = frame_count(samples.len(), frame_len);
        if labels.len() != expected {
            return Err(Error::Validation(format!(
                "instance '{id}': {} labels for {} samples (expected {expected} frames of {frame_len})",
                labels.len(),
                samples.len()
            )));
        }
        Ok(Self {
            id,
            samples,
            sample_rate,
            labels,
            frame_len,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Label of the frame containing sample `index`.
    pub fn sample_label(&self, index: usize) -> u32 {
        self.labels[index / self.frame_len]
    }

    /// Same id and rate with new samples; labels must already match.
    pub fn with_samples(&self, samples: Vec<f32>, labels: Vec<u32>) -> Result<Self> {
        Self::new(self.id.clone(), samples, self.sample_rate, labels, self.frame_len)
    }

    /// Same labels, new sample values of identical length.
    pub fn with_values(&self, samples: Vec<f32>) -> Result<Self> {
        if samples.len() != self.samples.len() {
            return Err(Error::Argument(format!(
                "with_values: length {} != {}",
                samples.len(),
                self.samples.len()
            )));
        }
        self.with_samples(samples, self.labels.clone())
    }

    /// Leading segment of at most `max_samples` samples.
    pub fn truncated(&self, max_samples: usize) -> Self {
        let keep = max_samples.max(1);
        if keep >= self.samples.len() {
            return self.clone();
        }
        let frames = frame_count(keep, self.frame_len);
        Self {
            id: self.id.clone(),
            samples: self.samples[..keep].to_vec(),
            sample_rate: self.sample_rate,
            labels: self.labels[..frames].to_vec(),
            frame_len: self.frame_len,
        }
    }

    /// Keeps the samples at `kept` (strictly increasing source indices) and
    /// re-derives frame labels from the surviving samples.
    pub fn select_samples(&self, kept: &[usize]) -> Result<Self> {
        self.select_samples_into(kept, Vec::new())
    }

    /// As [`AudioInstance::select_samples`], reusing `buf` for the samples.
    pub fn select_samples_into(&self, kept: &[usize], mut buf: Vec<f32>) -> Result<Self> {
        if kept.is_empty() {
            return Err(Error::Argument("cannot keep zero samples".into()));
        }
        buf.clear();
        buf.extend(kept.iter().map(|&i| self.samples[i]));
        let labels = realign_labels(kept, &self.labels, self.frame_len);
        Ok(self.derived(buf, labels))
    }

    /// As [`AudioInstance::select_samples`] for a kept set given as ascending,
    /// disjoint source ranges.
    pub fn select_ranges(&self, kept: &[Range<usize>]) -> Result<Self> {
        self.select_ranges_into(kept, Vec::new())
    }

    /// As [`AudioInstance::select_ranges`], reusing `buf` for the samples.
    pub fn select_ranges_into(&self, kept: &[Range<usize>], mut buf: Vec<f32>) -> Result<Self> {
        let total: usize = kept.iter().map(|r| r.len()).sum();
        if total == 0 {
            return Err(Error::Argument("cannot keep zero samples".into()));
        }
        buf.clear();
        for r in kept {
            buf.extend_from_slice(&self.samples[r.clone()]);
        }
        let labels = realign_label_ranges(kept, &self.labels, self.frame_len);
        Ok(self.derived(buf, labels))
    }

    /// A copy whose samples live in `buf`.
    pub fn clone_into(&self, mut buf: Vec<f32>) -> Self {
        buf.clear();
        buf.extend_from_slice(&self.samples);
        self.derived(buf, self.labels.clone())
    }

    /// Gives back the sample buffer for reuse.
    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    /// Samples taken from a validated instance keep its invariants.
    fn derived(&self, samples: Vec<f32>, labels: Vec<u32>) -> Self {
        debug_assert_eq!(labels.len(), frame_count(samples.len(), self.frame_len));
        Self {
            id: self.id.clone(),
            samples,
            sample_rate: self.sample_rate,
            labels,
            frame_len: self.frame_len,
        }
    }

    /// In-place value edits (masking); the length cannot change.
    pub(crate) fn samples_mut(&mut self) -> &mut [f32] {
        &mut self.samples
    }
}

fn add_count(counts: &mut Vec<(u32, usize)>, label: u32, n: usize) {
    match counts.iter_mut().find(|(l, _)| *l == label) {
        Some((_, c)) => *c += n,
        None => counts.push((label, n)),
    }
}

fn majority(counts: &[(u32, usize)]) -> u32 {
    counts
        .iter()
        .copied()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(l, _)| l)
        .expect("frames are nonempty")
}

/// Frame labels for a derived sequence whose sample `j` came from source
/// sample `positions[j]`: each output frame takes the majority label of its
/// source samples, ties going to the smaller token.
pub fn realign_labels(positions: &[usize], labels: &[u32], frame_len: usize) -> Vec<u32> {
    let mut counts: Vec<(u32, usize)> = Vec::with_capacity(4);
    positions
        .chunks(frame_len)
        .map(|frame| {
            counts.clear();
            for &p in frame {
                add_count(&mut counts, labels[p / frame_len], 1);
            }
            majority(&counts)
        })
        .collect()
}

/// [`realign_labels`] for positions given as ascending, disjoint ranges,
/// counting whole source-frame segments at a time.
pub fn realign_label_ranges(ranges: &[Range<usize>], labels: &[u32], frame_len: usize) -> Vec<u32> {
    let total: usize = ranges.iter().map(|r| r.len()).sum();
    let mut out = Vec::with_capacity(frame_count(total, frame_len));
    let mut counts: Vec<(u32, usize)> = Vec::with_capacity(4);
    let mut filled = 0;
    for r in ranges {
        let mut p = r.start;
        while p < r.end {
            let src_end = (p / frame_len + 1) * frame_len;
            let take = (r.end.min(src_end) - p).min(frame_len - filled);
            add_count(&mut counts, labels[p / frame_len], take);
            filled += take;
            p += take;
            if filled == frame_len {
                out.push(majority(&counts));
                counts.clear();
                filled = 0;
            }
        }
    }
    if filled > 0 {
        out.push(majority(&counts));
    }
    out
}
