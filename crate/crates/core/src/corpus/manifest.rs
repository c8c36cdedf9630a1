//! JSON-lines dataset manifest.
//!
//! Each line is one entry with `id`, `labels`, `duration_s` and exactly one
//! audio source: a `wav` path relative to the manifest, or an inline
//! `synthetic` description rendered deterministically from the labels.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::synth::render_waveform;
use crate::corpus::{frame_count, read_wav, AudioInstance};
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSynth {
    pub n_classes: u32,
    pub sigma: f64,
    pub seed: u64,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
}

fn default_rate() -> u32 {
    16_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wav: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<InlineSynth>,
    pub labels: Vec<u32>,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

/// Parses manifest text; blank lines are skipped but still counted.
pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if entry.wav.is_some() == entry.synthetic.is_some() {
            return Err(Error::Parse {
                line: line_no,
                message: "exactly one of `wav` or `synthetic` is required".into(),
            });
        }
        if !(entry.duration_s.is_finite() && entry.duration_s > 0.0) {
            return Err(Error::Validation(format!(
                "line {line_no}: duration_s must be positive, got {}",
                entry.duration_s
            )));
        }
        if !seen.insert(entry.id.clone()) {
            return Err(Error::Validation(format!(
                "line {line_no}: duplicate id '{}'",
                entry.id
            )));
        }
        entries.push(entry);
    }
    Ok(Manifest { entries })
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = self.to_jsonl()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Loads or renders every entry. WAV paths resolve against `base_dir`.
    pub fn materialize(&self, base_dir: &Path, frame_len: usize) -> Result<Vec<AudioInstance>> {
        self.entries
            .iter()
            .map(|e| e.materialize(base_dir, frame_len))
            .collect()
    }
}

impl ManifestEntry {
    pub fn materialize(&self, base_dir: &Path, frame_len: usize) -> Result<AudioInstance> {
        let (samples, rate) = match (&self.wav, &self.synthetic) {
            (Some(rel), None) => {
                let (samples, rate) = read_wav(base_dir.join(rel))?;
                let actual = samples.len() as f64 / f64::from(rate);
                if (actual - self.duration_s).abs() > 1.0 / f64::from(rate) {
                    return Err(Error::Validation(format!(
                        "'{}': manifest duration {} s but file holds {actual} s",
                        self.id, self.duration_s
                    )));
                }
                (samples, rate)
            }
            (None, Some(syn)) => {
                if syn.sample_rate == 0 || !(syn.sigma.is_finite() && syn.sigma >= 0.0) {
                    return Err(Error::Validation(format!(
                        "'{}': invalid inline synthetic spec",
                        self.id
                    )));
                }
                let n = ((self.duration_s * f64::from(syn.sample_rate)).round() as usize).max(1);
                if frame_count(n, frame_len) != self.labels.len() {
                    return Err(Error::Validation(format!(
                        "'{}': {} labels for {n} samples",
                        self.id,
                        self.labels.len()
                    )));
                }
                let mut rng = seeded(syn.seed);
                let samples = render_waveform(
                    &self.labels,
                    n,
                    frame_len,
                    syn.n_classes.max(1),
                    syn.sigma,
                    syn.sample_rate,
                    &mut rng,
                );
                (samples, syn.sample_rate)
            }
            _ => {
                return Err(Error::Validation(format!(
                    "'{}': exactly one of `wav` or `synthetic` is required",
                    self.id
                )))
            }
        };
        AudioInstance::new(self.id.clone(), samples, rate, self.labels.clone(), frame_len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE_A: &str = r#"{"id":"a","synthetic":{"n_classes":4,"sigma":0.1,"seed":1},"labels":[0,1],"duration_s":0.02}"#;
    const LINE_B: &str = r#"{"id":"b","wav":"b.wav","labels":[2],"duration_s":0.01}"#;
    const LINE_C: &str = r#"{"id":"c","wav":"c.wav","labels":[3],"duration_s":0.01}"#;

    #[test]
    fn empty_text_is_empty_manifest() {
        assert!(parse_manifest("").unwrap().is_empty());
    }

    #[test]
    fn preserves_order() {
        let m = parse_manifest(&format!("{LINE_A}\n{LINE_B}\n{LINE_C}\n")).unwrap();
        let ids: Vec<_> = m.entries.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn missing_id_cites_line() {
        let bad = r#"{"wav":"x.wav","labels":[0],"duration_s":1.0}"#;
        match parse_manifest(&format!("{LINE_A}\n{bad}\n")) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("id"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let err = parse_manifest(&format!("{LINE_B}\n{LINE_B}\n")).unwrap_err();
        assert!(matches!(err, Error::Validation(m) if m.contains("duplicate")));
    }

    #[test]
    fn both_sources_rejected() {
        let bad = r#"{"id":"z","wav":"z.wav","synthetic":{"n_classes":2,"sigma":0,"seed":1},"labels":[0],"duration_s":0.01}"#;
        assert!(matches!(parse_manifest(bad), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn inline_synthetic_materializes_deterministically() {
        let m = parse_manifest(LINE_A).unwrap();
        let a = m.materialize(Path::new("."), 160).unwrap();
        let b = m.materialize(Path::new("."), 160).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].len(), 320);
        assert_eq!(a[0].labels(), &[0, 1]);
    }

    #[test]
    fn wav_entries_resolve_relative_to_base() {
        let dir = tempfile::tempdir().unwrap();
        crate::corpus::write_wav(dir.path().join("b.wav"), &[0.25; 160], 16_000).unwrap();
        let m = parse_manifest(LINE_B).unwrap();
        let inst = m.materialize(dir.path(), 160).unwrap();
        assert_eq!(inst[0].samples(), &[0.25f32; 160][..]);
        let short = parse_manifest(&LINE_B.replace("0.01", "0.5")).unwrap();
        assert!(short.materialize(dir.path(), 160).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let m = parse_manifest(&format!("{LINE_A}\n{LINE_B}\n")).unwrap();
        assert_eq!(parse_manifest(&m.to_jsonl().unwrap()).unwrap(), m);
    }
}
