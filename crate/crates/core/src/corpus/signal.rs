use crate::corpus::{frame_count, realign_labels, AudioInstance};
use crate::error::{Error, Result};

/// Per-utterance z-normalisation with population standard deviation.
///
/// A constant signal carries no information and maps to all zeros.
pub fn z_normalize(samples: &[f32]) -> Vec<f32> {
    if samples.is_empty() {
        return Vec::new();
    }
    let n = samples.len() as f64;
    let mean = samples.iter().map(|&x| f64::from(x)).sum::<f64>() / n;
    let var = samples
        .iter()
        .map(|&x| {
            let d = f64::from(x) - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if std <= f64::EPSILON * mean.abs().max(1.0) {
        return vec![0.0; samples.len()];
    }
    samples
        .iter()
        .map(|&x| ((f64::from(x) - mean) / std) as f32)
        .collect()
}

/// Output length for a rate change: `round(len * dst / src)`, at least 1.
pub fn resampled_len(len: usize, src_rate: u32, dst_rate: u32) -> usize {
    let n = (len as f64 * f64::from(dst_rate) / f64::from(src_rate)).round() as usize;
    n.max(1)
}

/// Source position of each output sample. The first and last output samples
/// sit on the first and last source samples; the rest are evenly spaced.
fn source_positions(len: usize, out_len: usize) -> impl Iterator<Item = f64> {
    let step = if out_len > 1 {
        (len - 1) as f64 / (out_len - 1) as f64
    } else {
        0.0
    };
    (0..out_len).map(move |j| (j as f64 * step).min((len - 1) as f64))
}

/// Linear-interpolation resampler without anti-aliasing.
pub fn resample_linear(samples: &[f32], src_rate: u32, dst_rate: u32) -> Result<Vec<f32>> {
    if src_rate == 0 || dst_rate == 0 {
        return Err(Error::Argument(format!(
            "sample rates must be positive (got {src_rate} -> {dst_rate})"
        )));
    }
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    if src_rate == dst_rate {
        return Ok(samples.to_vec());
    }
    let out_len = resampled_len(samples.len(), src_rate, dst_rate);
    Ok(source_positions(samples.len(), out_len)
        .map(|p| {
            let i = p.floor() as usize;
            let frac = p - i as f64;
            let a = f64::from(samples[i]);
            match samples.get(i + 1) {
                Some(&b) if frac > 0.0 => (a + (f64::from(b) - a) * frac) as f32,
                _ => a as f32,
            }
        })
        .collect())
}

/// Resamples an instance and re-derives its frame labels from the nearest
/// source sample of each output sample.
pub fn resample_instance(instance: &AudioInstance, dst_rate: u32) -> Result<AudioInstance> {
    let src_rate = instance.sample_rate();
    let samples = resample_linear(instance.samples(), src_rate, dst_rate)?;
    if dst_rate == src_rate {
        return Ok(instance.clone());
    }
    let positions: Vec<usize> = source_positions(instance.len(), samples.len())
        .map(|p| p.round() as usize)
        .collect();
    let labels = realign_labels(&positions, instance.labels(), instance.frame_len());
    debug_assert_eq!(labels.len(), frame_count(samples.len(), instance.frame_len()));
    AudioInstance::new(
        instance.id(),
        samples,
        dst_rate,
        labels,
        instance.frame_len(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f32], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (f64::from(*x) - y).abs() <= tol)
    }

    #[test]
    fn constant_signal_maps_to_zeros() {
        assert_eq!(z_normalize(&[1.0, 1.0, 1.0, 1.0]), vec![0.0; 4]);
    }

    #[test]
    fn unit_signal_is_fixed_point() {
        assert!(close(&z_normalize(&[-1.0, 1.0]), &[-1.0, 1.0], 1e-6));
    }

    #[test]
    fn ramp_matches_hand_computation() {
        // mean 3, population variance 5
        let s5 = 5f64.sqrt();
        let expected: Vec<f64> = [0.0, 2.0, 4.0, 6.0].iter().map(|x| (x - 3.0) / s5).collect();
        assert!(close(&z_normalize(&[0.0, 2.0, 4.0, 6.0]), &expected, 1e-6));
        assert!(close(
            &z_normalize(&[0.0, 2.0, 4.0, 6.0]),
            &[-1.3416, -0.4472, 0.4472, 1.3416],
            1e-3
        ));
    }

    #[test]
    fn resample_identity_and_length() {
        let x: Vec<f32> = (0..50).map(|i| (i as f32 * 0.1).sin()).collect();
        assert_eq!(resample_linear(&x, 16_000, 16_000).unwrap(), x);
        let sec = vec![0.0f32; 16_000];
        assert_eq!(resample_linear(&sec, 16_000, 11_025).unwrap().len(), 11_025);
    }

    #[test]
    fn resample_upsample_two_samples() {
        // positions j * (2-1)/(4-1) = 0, 1/3, 2/3, 1
        let y = resample_linear(&[0.0, 1.0], 8000, 16_000).unwrap();
        assert!(close(&y, &[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0], 1e-6));
    }

    #[test]
    fn resample_rejects_zero_rate() {
        assert!(matches!(resample_linear(&[1.0], 16_000, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn resample_instance_relabels() {
        let inst = AudioInstance::new("r", vec![0.5; 320], 16_000, vec![3, 4], 160).unwrap();
        let r = resample_instance(&inst, 11_025).unwrap();
        assert_eq!(r.len(), 221);
        assert_eq!(r.sample_rate(), 11_025);
        assert_eq!(r.labels(), &[3, 4]);
    }

    proptest! {
        #[test]
        fn z_normalize_moments_and_idempotence(
            x in prop::collection::vec(-10.0f32..10.0, 2..300)
        ) {
            let y = z_normalize(&x);
            prop_assert_eq!(y.len(), x.len());
            let n = y.len() as f64;
            let mean = y.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
            let var = y.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
            if y.iter().any(|&v| v != 0.0) {
                prop_assert!(mean.abs() < 1e-6);
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-6);
                let z = z_normalize(&y);
                for (a, b) in y.iter().zip(&z) {
                    prop_assert!((a - b).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn up_then_down_preserves_length(len in 1usize..2000, factor in 2u32..5) {
            let x = vec![0.25f32; len];
            let up = resample_linear(&x, 8000, 8000 * factor).unwrap();
            let down = resample_linear(&up, 8000 * factor, 8000).unwrap();
            prop_assert_eq!(down.len(), len);
        }
    }
}
