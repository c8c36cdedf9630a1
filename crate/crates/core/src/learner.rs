//! The learner contract and a toy linear-softmax frame classifier.
//!
//! The toy model maps each frame to a small vector of per-frame statistics and
//! applies one linear softmax layer. Per-instance loss is the mean per-frame
//! cross-entropy; its error rate is the fraction of misclassified frames.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::AudioInstance;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Mean, energy, zero-crossing rate, then normalised autocorrelations at
/// lags 1..=MAX_LAG.
pub const MAX_LAG: usize = 4;
pub const FEATURE_DIM: usize = 3 + MAX_LAG;
const INIT_SCALE: f64 = 0.01;

pub type Features = [f64; FEATURE_DIM];

/// Misclassified and total frame counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameErrors {
    pub wrong: usize,
    pub total: usize,
}

impl FrameErrors {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.wrong as f64 / self.total as f64
        }
    }
}

impl std::ops::AddAssign for FrameErrors {
    fn add_assign(&mut self, rhs: Self) {
        self.wrong += rhs.wrong;
        self.total += rhs.total;
    }
}

/// What the harness needs from a model.
pub trait Learner {
    /// One optimisation step on the batch; returns each instance's pre-step
    /// mean loss.
    fn train_batch(&mut self, batch: &[&AudioInstance], step_size: f64) -> Result<BTreeMap<String, f64>>;

    fn frame_errors(&self, instances: &[&AudioInstance]) -> FrameErrors;

    /// Frame error rate in `[0, 1]`.
    fn evaluate(&self, instances: &[&AudioInstance]) -> f64 {
        self.frame_errors(instances).rate()
    }

    fn snapshot(&self) -> Vec<f64>;

    fn restore(&mut self, params: &[f64]) -> Result<()>;
}

pub fn frame_features(frame: &[f32]) -> Features {
    let m = frame.len();
    let mut sum = 0.0;
    let mut energy = 0.0;
    let mut crossings = 0usize;
    let mut lags = [0.0; MAX_LAG];
    for i in 0..m {
        let x = f64::from(frame[i]);
        sum += x;
        energy += x * x;
        if i > 0 && (frame[i - 1] < 0.0) != (frame[i] < 0.0) {
            crossings += 1;
        }
        for (k, acc) in lags.iter_mut().enumerate() {
            if let Some(&y) = frame.get(i + k + 1) {
                *acc += x * f64::from(y);
            }
        }
    }
    let mut out = [0.0; FEATURE_DIM];
    out[0] = sum / m as f64;
    out[1] = energy / m as f64;
    out[2] = crossings as f64 / (m.max(2) - 1) as f64;
    if energy > 0.0 {
        for (k, acc) in lags.iter().enumerate() {
            out[3 + k] = acc / energy;
        }
    }
    out
}

pub fn instance_features(instance: &AudioInstance) -> Vec<Features> {
    instance
        .samples()
        .chunks(instance.frame_len())
        .map(frame_features)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub n_classes: usize,
    pub feature_dim: usize,
    pub seed: u64,
    pub epoch: usize,
}

/// Linear softmax over per-frame features, trained with plain SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyFrameClassifier {
    n_classes: usize,
    seed: u64,
    /// Row-major `[n_classes][FEATURE_DIM + 1]`; the last column is the bias.
    params: Vec<f64>,
}

impl ToyFrameClassifier {
    /// Weights drawn uniformly from a small interval around zero.
    pub fn new(n_classes: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::ModelInit, &[]);
        let params = (0..n_classes * (FEATURE_DIM + 1))
            .map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE))
            .collect();
        Self {
            n_classes,
            seed,
            params,
        }
    }

    pub fn zeros(n_classes: usize) -> Self {
        Self {
            n_classes,
            seed: 0,
            params: vec![0.0; n_classes * (FEATURE_DIM + 1)],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn stride() -> usize {
        FEATURE_DIM + 1
    }

    fn logits(&self, phi: &Features, out: &mut [f64]) {
        let s = Self::stride();
        for (c, z) in out.iter_mut().enumerate() {
            let w = &self.params[c * s..(c + 1) * s];
            *z = w[FEATURE_DIM] + w[..FEATURE_DIM].iter().zip(phi).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn predict(&self, phi: &Features, buf: &mut [f64]) -> usize {
        self.logits(phi, buf);
        let mut best = 0;
        for c in 1..buf.len() {
            if buf[c] > buf[best] {
                best = c;
            }
        }
        best
    }

    /// Softmax in place; returns log-sum-exp.
    fn softmax(z: &mut [f64]) -> f64 {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in z.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in z.iter_mut() {
            *v /= total;
        }
        max + total.ln()
    }

    fn check_labels(&self, instance: &AudioInstance) -> Result<()> {
        match instance.labels().iter().find(|&&l| l as usize >= self.n_classes) {
            Some(l) => Err(Error::Training(format!(
                "'{}': label {l} out of range for {} classes",
                instance.id(),
                self.n_classes
            ))),
            None => Ok(()),
        }
    }

    /// Mean per-frame cross-entropy and, if `grad` is given, its gradient
    /// accumulated into `grad` with weight `scale`.
    fn accumulate(&self, instance: &AudioInstance, grad: Option<(&mut [f64], f64)>) -> f64 {
        let feats = instance_features(instance);
        let frames = feats.len() as f64;
        let s = Self::stride();
        let mut z = vec![0.0; self.n_classes];
        let mut loss = 0.0;
        let mut grad = grad;
        for (phi, &label) in feats.iter().zip(instance.labels()) {
            let y = label as usize;
            self.logits(phi, &mut z);
            let raw = z[y];
            let lse = Self::softmax(&mut z);
            loss += lse - raw;
            if let Some((g, scale)) = grad.as_mut() {
                let w = *scale / frames;
                for c in 0..self.n_classes {
                    let d = (z[c] - if c == y { 1.0 } else { 0.0 }) * w;
                    let row = &mut g[c * s..(c + 1) * s];
                    for (gi, fi) in row[..FEATURE_DIM].iter_mut().zip(phi) {
                        *gi += d * fi;
                    }
                    row[FEATURE_DIM] += d;
                }
            }
        }
        loss / frames
    }

    pub fn instance_loss(&self, instance: &AudioInstance) -> f64 {
        self.accumulate(instance, None)
    }

    pub fn loss_and_gradient(&self, instance: &AudioInstance) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; self.params.len()];
        let loss = self.accumulate(instance, Some((&mut g, 1.0)));
        (loss, g)
    }

    pub fn write_checkpoint(&self, path: impl AsRef<Path>, epoch: usize) -> Result<()> {
        let path = path.as_ref();
        let header = CheckpointHeader {
            n_classes: self.n_classes,
            feature_dim: FEATURE_DIM,
            seed: self.seed,
            epoch,
        };
        let mut buf = serde_json::to_vec(&header)?;
        buf.push(b'\n');
        for p in &self.params {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Reads a checkpoint: one JSON header line followed by little-endian f64s.
    pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(Self, CheckpointHeader)> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(f);
        let mut line = String::new();
        reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
        if header.feature_dim != FEATURE_DIM {
            return Err(Error::Format(format!(
                "checkpoint feature_dim {} does not match {FEATURE_DIM}",
                header.feature_dim
            )));
        }
        let mut raw = Vec::new();
        reader.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
        let expected = header.n_classes * (FEATURE_DIM + 1);
        if raw.len() != expected * 8 {
            return Err(Error::Format(format!(
                "checkpoint holds {} bytes of parameters, expected {}",
                raw.len(),
                expected * 8
            )));
        }
        let params = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok((
            Self {
                n_classes: header.n_classes,
                seed: header.seed,
                params,
            },
            header,
        ))
    }
}

impl Learner for ToyFrameClassifier {
    fn train_batch(&mut self, batch: &[&AudioInstance], step_size: f64) -> Result<BTreeMap<String, f64>> {
        if batch.is_empty() {
            return Err(Error::Training("empty batch".into()));
        }
        let mut grad = vec![0.0; self.params.len()];
        let scale = 1.0 / batch.len() as f64;
        let mut losses = BTreeMap::new();
        for inst in batch {
            self.check_labels(inst)?;
            let loss = self.accumulate(inst, Some((&mut grad, scale)));
            losses.insert(inst.id().to_string(), loss);
        }
        if grad.iter().any(|g| !g.is_finite()) || losses.values().any(|l| !l.is_finite()) {
            return Err(Error::Training("non-finite gradient".into()));
        }
        for (p, g) in self.params.iter_mut().zip(&grad) {
            *p -= step_size * g;
        }
        Ok(losses)
    }

    fn frame_errors(&self, instances: &[&AudioInstance]) -> FrameErrors {
        let mut buf = vec![0.0; self.n_classes];
        let mut errors = FrameErrors::default();
        for inst in instances {
            for (phi, &label) in instance_features(inst).iter().zip(inst.labels()) {
                errors.total += 1;
                if self.predict(phi, &mut buf) != label as usize {
                    errors.wrong += 1;
                }
            }
        }
        errors
    }

    fn snapshot(&self) -> Vec<f64> {
        self.params.clone()
    }

    fn restore(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Argument(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }
}
