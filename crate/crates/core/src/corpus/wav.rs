//! Minimal RIFF/WAVE reader and writer for 16-bit mono PCM.

use std::path::Path;

use crate::error::{Error, Result};

const PCM_FORMAT: u16 = 1;

pub fn read_wav(path: impl AsRef<Path>) -> Result<(Vec<f32>, u32)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_wav(path: impl AsRef<Path>, samples: &[f32], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_wav(samples, sample_rate)).map_err(|e| Error::io(path, e))
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes a PCM-16 mono WAV image; amplitudes are `sample / 32768`.
pub fn decode_wav(bytes: &[u8]) -> Result<(Vec<f32>, u32)> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12;
    let mut sample_rate = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated '{}' chunk",
                    String::from_utf8_lossy(id)
                ))
            })?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Format("fmt chunk too short".into()));
                }
                let format = read_u16(bytes, body);
                let channels = read_u16(bytes, body + 2);
                let rate = read_u32(bytes, body + 4);
                let bits = read_u16(bytes, body + 14);
                if format != PCM_FORMAT {
                    return Err(Error::Format(format!(
                        "unsupported format tag {format:#06x}, only PCM is accepted"
                    )));
                }
                if channels != 1 {
                    return Err(Error::Format(format!(
                        "{channels} channels, only mono is accepted"
                    )));
                }
                if bits != 16 {
                    return Err(Error::Format(format!(
                        "{bits}-bit samples, only 16-bit is accepted"
                    )));
                }
                if rate == 0 {
                    return Err(Error::Format("sample rate 0".into()));
                }
                sample_rate = Some(rate);
            }
            b"data" => {
                let rate = sample_rate
                    .ok_or_else(|| Error::Format("data chunk before fmt chunk".into()))?;
                if !size.is_multiple_of(2) {
                    return Err(Error::Format("truncated sample in data chunk".into()));
                }
                let samples = bytes[body..end]
                    .chunks_exact(2)
                    .map(|c| f32::from(i16::from_le_bytes([c[0], c[1]])) / 32768.0)
                    .collect();
                return Ok((samples, rate));
            }
            _ => {}
        }
        pos = end + (size & 1);
    }
    Err(Error::Format("missing data chunk".into()))
}

fn quantize(x: f32) -> i16 {
    (f64::from(x) * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn encode_wav(samples: &[f32], sample_rate: u32) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + samples.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}
