use std::collections::BTreeMap;

use ddp_core::corpus::{generate_synthetic, generate_synthetic_strata, z_normalize};
use ddp_core::rng::seeded;
use ddp_core::{AudioInstance, Learner, Stratum, SyntheticSpec, ToyFrameClassifier};
use rand::Rng;

fn spec(n: usize, strata: Vec<Stratum>, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_instances: n,
        n_classes: 4,
        duration_range_s: (0.1, 0.4),
        strata,
        seed,
        sample_rate: 16_000,
        frame_len: 160,
    }
}

fn normalized(instances: Vec<AudioInstance>) -> Vec<AudioInstance> {
    instances
        .into_iter()
        .map(|i| {
            let z = z_normalize(i.samples());
            i.with_values(z).unwrap()
        })
        .collect()
}

/// Plain epochs over fixed-size batches.
fn train(model: &mut ToyFrameClassifier, data: &[AudioInstance], epochs: usize, step: f64) -> BTreeMap<String, f64> {
    let mut last = BTreeMap::new();
    for _ in 0..epochs {
        for batch in data.chunks(16) {
            let refs: Vec<&AudioInstance> = batch.iter().collect();
            last.append(&mut model.train_batch(&refs, step).unwrap());
        }
    }
    last
}

fn central_difference(model: &ToyFrameClassifier, inst: &AudioInstance, h: f64) -> Vec<f64> {
    let base = model.snapshot();
    let mut probe = model.clone();
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.restore(&p).unwrap();
            let up = probe.instance_loss(inst);
            p[i] = base[i] - h;
            probe.restore(&p).unwrap();
            let down = probe.instance_loss(inst);
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = seeded(99);
    for trial in 0..20 {
        let frame_len = 8;
        let n = frame_len * 3;
        let samples: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let labels: Vec<u32> = (0..3).map(|_| rng.random_range(0..4)).collect();
        let inst = AudioInstance::new("g", samples, 16_000, labels, frame_len).unwrap();
        let mut model = ToyFrameClassifier::new(4, trial);
        let params: Vec<f64> = (0..model.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        model.restore(&params).unwrap();
        let (_, analytic) = model.loss_and_gradient(&inst);
        let numeric = central_difference(&model, &inst, 1e-5);
        for (a, b) in analytic.iter().zip(&numeric) {
            let scale = a.abs().max(b.abs()).max(1.0);
            assert!((a - b).abs() / scale < 1e-6, "trial {trial}: {a} vs {b}");
        }
    }
}

#[test]
fn untrained_loss_is_near_ln4() {
    let data = normalized(generate_synthetic(&spec(50, vec![Stratum { fraction: 1.0, noise_sigma: 0.3 }], 3)).unwrap());
    let model = ToyFrameClassifier::new(4, 1);
    let mean = data.iter().map(|i| model.instance_loss(i)).sum::<f64>() / data.len() as f64;
    assert!((mean - 4f64.ln()).abs() < 0.3, "{mean}");
}

#[test]
fn repeated_steps_on_clean_instance_descend() {
    let data = normalized(generate_synthetic(&spec(1, vec![Stratum { fraction: 1.0, noise_sigma: 0.0 }], 5)).unwrap());
    let mut model = ToyFrameClassifier::new(4, 2);
    let mut losses = Vec::new();
    for _ in 0..51 {
        losses.push(model.train_batch(&[&data[0]], 0.5).unwrap()[data[0].id()]);
    }
    let decreasing = losses.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(decreasing >= 45, "{decreasing} of 50 steps decreased");
}

#[test]
fn clean_stratum_is_learned_within_ten_epochs() {
    let clean = vec![Stratum { fraction: 1.0, noise_sigma: 0.0 }];
    let train_set = normalized(generate_synthetic(&spec(200, clean.clone(), 8)).unwrap());
    let test_set = normalized(generate_synthetic(&spec(50, clean, 9)).unwrap());
    let mut model = ToyFrameClassifier::new(4, 0);
    train(&mut model, &train_set, 10, 0.5);
    let err = model.evaluate(&test_set.iter().collect::<Vec<_>>());
    assert!(err < 0.05, "frame error {err}");
}

#[test]
fn noisy_stratum_has_higher_early_loss() {
    for seed in 0..5 {
        let strata = vec![
            Stratum { fraction: 0.5, noise_sigma: 0.05 },
            Stratum { fraction: 0.5, noise_sigma: 1.0 },
        ];
        let data = generate_synthetic_strata(&spec(120, strata, seed)).unwrap();
        let strata_of: Vec<usize> = data.iter().map(|(_, s)| *s).collect();
        let instances = normalized(data.into_iter().map(|(i, _)| i).collect());
        let mut model = ToyFrameClassifier::new(4, seed);
        let losses = train(&mut model, &instances, 3, 0.5);
        let mean = |s: usize| {
            let v: Vec<f64> = instances
                .iter()
                .zip(&strata_of)
                .filter(|(_, &st)| st == s)
                .map(|(i, _)| losses[i.id()])
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(1) > mean(0), "seed {seed}: {} <= {}", mean(1), mean(0));
    }
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn loss_tracks_stratum_difficulty() {
    let strata = vec![
        Stratum { fraction: 0.5, noise_sigma: 0.1 },
        Stratum { fraction: 0.3, noise_sigma: 0.6 },
        Stratum { fraction: 0.2, noise_sigma: 1.5 },
    ];
    let data = generate_synthetic_strata(&spec(300, strata.clone(), 21)).unwrap();
    let sigmas: Vec<f64> = data.iter().map(|(_, s)| strata[*s].noise_sigma).collect();
    let instances = normalized(data.into_iter().map(|(i, _)| i).collect());
    let mut model = ToyFrameClassifier::new(4, 4);
    let losses = train(&mut model, &instances, 3, 0.5);
    let loss_vec: Vec<f64> = instances.iter().map(|i| losses[i.id()]).collect();
    let rho = spearman(&sigmas, &loss_vec);
    assert!(rho > 0.5, "spearman {rho}");
}

#[test]
fn training_is_bitwise_deterministic() {
    let data = normalized(generate_synthetic(&spec(40, vec![Stratum { fraction: 1.0, noise_sigma: 0.4 }], 12)).unwrap());
    let mut a = ToyFrameClassifier::new(4, 6);
    let mut b = ToyFrameClassifier::new(4, 6);
    train(&mut a, &data, 2, 0.3);
    train(&mut b, &data, 2, 0.3);
    assert_eq!(a.snapshot(), b.snapshot());
}

#[test]
fn constant_model_on_balanced_classes() {
    let data = generate_synthetic(&spec(200, vec![Stratum { fraction: 1.0, noise_sigma: 0.1 }], 13)).unwrap();
    let err = ToyFrameClassifier::zeros(4).evaluate(&data.iter().collect::<Vec<_>>());
    assert!((err - 0.75).abs() < 0.03, "{err}");
}
