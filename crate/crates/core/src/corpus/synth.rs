//! Stratified synthetic task: per-frame class-indexed sinusoids plus Gaussian
//! noise whose level differs by stratum, so that noisier strata are harder.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{frame_count, AudioInstance, DEFAULT_FRAME_LEN};
use crate::error::{Error, Result};
use crate::rng::{seeded, StreamRng};

/// Longest run of consecutive frames sharing one class.
const MAX_SEGMENT_FRAMES: usize = 6;
const PEAK: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub fraction: f64,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_instances: usize,
    pub n_classes: u32,
    /// Inclusive `[min, max]` utterance duration in seconds.
    pub duration_range_s: (f64, f64),
    pub strata: Vec<Stratum>,
    pub seed: u64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
    #[serde(default = "default_frame_len")]
    pub frame_len: usize,
}

fn default_sample_rate() -> u32 {
    16_000
}

fn default_frame_len() -> usize {
    DEFAULT_FRAME_LEN
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(Error::Validation("n_classes must be at least 1".into()));
        }
        if self.sample_rate == 0 || self.frame_len == 0 {
            return Err(Error::Validation(
                "sample_rate and frame_len must be positive".into(),
            ));
        }
        let (lo, hi) = self.duration_range_s;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(Error::Validation(format!(
                "duration range [{lo}, {hi}] must satisfy 0 < min <= max"
            )));
        }
        if self.strata.is_empty() {
            return Err(Error::Validation("at least one stratum is required".into()));
        }
        for s in &self.strata {
            if !(s.fraction.is_finite() && s.fraction >= 0.0) {
                return Err(Error::Validation(format!("bad stratum fraction {}", s.fraction)));
            }
            if !(s.noise_sigma.is_finite() && s.noise_sigma >= 0.0) {
                return Err(Error::Validation(format!(
                    "noise_sigma must be finite and >= 0, got {}",
                    s.noise_sigma
                )));
            }
        }
        let total: f64 = self.strata.iter().map(|s| s.fraction).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "stratum fractions sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    fn pick_stratum(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, s) in self.strata.iter().enumerate() {
            acc += s.fraction;
            if u < acc {
                return i;
            }
        }
        self.strata.len() - 1
    }
}

/// Tone frequency for class `class`, spread evenly below a quarter of the rate.
pub fn class_frequency_hz(class: u32, n_classes: u32, sample_rate: u32) -> f64 {
    f64::from(sample_rate) * f64::from(2 * class + 1) / (8.0 * f64::from(n_classes))
}

/// Renders samples for the given frame labels. Phase is continuous across a
/// run of equal labels and re-drawn at each class change.
pub(crate) fn render_waveform(
    labels: &[u32],
    n_samples: usize,
    frame_len: usize,
    n_classes: u32,
    sigma: f64,
    sample_rate: u32,
    rng: &mut StreamRng,
) -> Vec<f32> {
    let mut out = Vec::with_capacity(n_samples);
    let mut phase = 0.0;
    let mut prev = None;
    for (f, &label) in labels.iter().enumerate() {
        if prev != Some(label) {
            phase = rng.random::<f64>() * TAU;
            prev = Some(label);
        }
        let omega = TAU * class_frequency_hz(label % n_classes, n_classes, sample_rate)
            / f64::from(sample_rate);
        let start = f * frame_len;
        let end = (start + frame_len).min(n_samples);
        for _ in start..end {
            let noise: f64 = StandardNormal.sample(rng);
            out.push(phase.sin() + sigma * noise);
            phase = (phase + omega) % TAU;
        }
    }
    let peak = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = if peak > PEAK { PEAK / peak } else { 1.0 };
    out.into_iter().map(|x| (x * scale) as f32).collect()
}

fn random_labels(frames: usize, n_classes: u32, rng: &mut StreamRng) -> Vec<u32> {
    let mut labels = Vec::with_capacity(frames);
    while labels.len() < frames {
        let class = rng.random_range(0..n_classes);
        let run = rng.random_range(2..=MAX_SEGMENT_FRAMES);
        for _ in 0..run.min(frames - labels.len()) {
            labels.push(class);
        }
    }
    labels
}

/// Generates the dataset together with each instance's stratum index.
pub fn generate_synthetic_strata(spec: &SyntheticSpec) -> Result<Vec<(AudioInstance, usize)>> {
    spec.validate()?;
    let mut rng = seeded(spec.seed);
    let (lo, hi) = spec.duration_range_s;
    let width = (spec.n_instances.max(1) - 1).to_string().len().max(5);
    (0..spec.n_instances)
        .map(|i| {
            let stratum = spec.pick_stratum(rng.random::<f64>());
            let duration = lo + (hi - lo) * rng.random::<f64>();
            let n_samples = ((duration * f64::from(spec.sample_rate)).round() as usize).max(1);
            let labels = random_labels(frame_count(n_samples, spec.frame_len), spec.n_classes, &mut rng);
            let samples = render_waveform(
                &labels,
                n_samples,
                spec.frame_len,
                spec.n_classes,
                spec.strata[stratum].noise_sigma,
                spec.sample_rate,
                &mut rng,
            );
            let id = format!("syn-{i:0width$}");
            AudioInstance::new(id, samples, spec.sample_rate, labels, spec.frame_len)
                .map(|inst| (inst, stratum))
        })
        .collect()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<AudioInstance>> {
    Ok(generate_synthetic_strata(spec)?
        .into_iter()
        .map(|(inst, _)| inst)
        .collect())
}
