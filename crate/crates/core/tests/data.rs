use proptest::prelude::*;
use reset_opt::data::*;
use reset_opt::nn::*;
use reset_opt::train::*;

#[test]
fn sampler_frequencies_are_uniform() {
    let n = 50;
    let mut sampler = BatchSampler::new(100, 42, SamplingMode::WithReplacement).unwrap();
    let mut counts = vec![0u64; n];
    for _ in 0..1000 {
        for i in sampler.sample_batch(n).unwrap() {
            counts[i] += 1;
        }
    }
    let draws = 100_000.0;
    let p = 1.0 / n as f64;
    let se = (p * (1.0 - p) / draws).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        let f = c as f64 / draws;
        assert!((f - p).abs() <= 5.0 * se, "index {i}: {f} vs {p} (se {se})");
    }
    // chi-square with 49 dof: mean 49, sd ~9.9
    let expected = draws * p;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < 49.0 + 5.0 * 9.9, "chi2 {chi2}");
}

#[test]
fn sampler_replays_by_counter() {
    let mut a = BatchSampler::new(16, 3, SamplingMode::WithReplacement).unwrap();
    let mut b = BatchSampler::new(16, 3, SamplingMode::WithReplacement).unwrap();
    let first: Vec<_> = (0..5).map(|_| a.sample_batch(100).unwrap()).collect();
    assert_eq!(b.batch_at(3, 100).unwrap(), first[3]);
    b.set_counter(1);
    assert_eq!(b.sample_batch(100).unwrap(), first[1]);
}

#[test]
fn well_separated_blobs_are_linearly_separable() {
    let ds = make_blobs(2, 200, 16, 10.0, 5).unwrap();
    // one hidden layer would do; train the FCN briefly and read training accuracy
    let net = Network::new(NetworkSpec::fcn(vec![16], 8, 2, false)).unwrap();
    let cfg = TrainConfig {
        lr: 5e-2,
        momentum: 0.0,
        batch_size: 16,
        total_iters: 300,
        loss: LossKind::CrossEntropy,
        sampling: SamplingMode::WithReplacement,
        lr_decay: None,
        reset: ResetConfig {
            reset_probability: 0.0,
            ..ResetConfig::default()
        },
        eval_chunk: 512,
    };
    let out = train(&net, &ds, &ds, &ds, &cfg, 5, &mut NoObserver).unwrap();
    let (_, acc) = net
        .evaluate(&out.best, &out.best_running, ds.features(), ds.true_labels(), LossKind::CrossEntropy, 512)
        .unwrap();
    assert!(acc > 0.99, "accuracy {acc}");

    // the class means themselves separate the data: nearest-centroid probe
    let centroids: Vec<Vec<f64>> = (0..2)
        .map(|k| {
            let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.true_labels()[i] == k).collect();
            let mut m = vec![0.0; 16];
            for &i in &idx {
                for (a, b) in m.iter_mut().zip(ds.features().row(i)) {
                    *a += b / idx.len() as f64;
                }
            }
            m
        })
        .collect();
    let correct = (0..ds.len())
        .filter(|&i| {
            let d: Vec<f64> = centroids
                .iter()
                .map(|c| c.iter().zip(ds.features().row(i)).map(|(a, b)| (a - b).powi(2)).sum())
                .collect();
            (d[1] < d[0]) as usize == ds.true_labels()[i]
        })
        .count();
    assert!(correct as f64 / ds.len() as f64 > 0.99);
}

#[test]
fn symmetric_corruption_marginals() {
    let c = 10;
    let tau = 0.4;
    let ds = make_blobs(c, 10_000, 2, 1.0, 1).unwrap();
    let noisy = corrupt(&ds, &NoiseSpec::symmetric(tau), 9).unwrap();
    let mut m = vec![vec![0.0; c]; c];
    for (&t, &y) in noisy.true_labels().iter().zip(noisy.noisy_labels()) {
        m[t][y] += 1.0;
    }
    for (t, row) in m.iter().enumerate() {
        let n: f64 = row.iter().sum();
        for (y, &count) in row.iter().enumerate() {
            let p = if t == y { 1.0 - tau } else { tau / (c - 1) as f64 };
            let se = (p * (1.0 - p) / n).sqrt();
            assert!((count / n - p).abs() <= 3.0 * se, "cell ({t},{y}): {} vs {p}", count / n);
        }
    }
    let n = noisy.len() as f64;
    assert!((noisy.corrupted_fraction() - tau).abs() <= 3.0 * (tau * (1.0 - tau) / n).sqrt());
}

#[test]
fn cifar_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("batch.bin");
    let mut bytes = Vec::new();
    for label in 0..10u8 {
        bytes.push(label);
        bytes.extend((0..3072).map(|i| ((i + label as usize) % 256) as u8));
    }
    std::fs::write(&path, &bytes).unwrap();
    let ds = load_cifar_binary(&[&path], 10, false).unwrap();
    assert_eq!(ds.len(), 10);
    assert_eq!(ds.features().shape(), &[10, 3, 32, 32]);
    assert_eq!(ds.class_counts(), vec![1; 10]);
    assert_eq!(ds.features().row(1)[0], 1.0 / 255.0);

    std::fs::write(&path, &bytes[..3073 * 2 + 5]).unwrap();
    assert!(matches!(load_cifar_binary(&[&path], 10, false), Err(reset_opt::Error::Format(_))));
    assert!(load_cifar_binary(&[dir.path().join("missing.bin")], 10, false).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn split_is_a_stratified_partition(classes in 2usize..6, per in 1usize..40, frac in 0.05f64..0.95, seed in 0u64..1000) {
        let ds = make_blobs(classes, per, 3, 2.0, seed).unwrap();
        let (tr, va) = split(&ds, frac, seed).unwrap();
        prop_assert_eq!(tr.len() + va.len(), ds.len());
        // features are distinct almost surely, so rows identify samples
        let mut rows: Vec<Vec<u64>> = tr.features().data().chunks(3).chain(va.features().data().chunks(3))
            .map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        rows.sort();
        rows.dedup();
        prop_assert_eq!(rows.len(), ds.len());
        for k in 0..classes {
            let want = per as f64 * frac;
            let got = va.class_counts()[k] as f64;
            prop_assert!((got - want).abs() <= 1.0 + 1e-9, "class {} val {} want {}", k, got, want);
        }
    }

    #[test]
    fn corruption_keeps_mask_consistent(rate in 0.0f64..=1.0, seed in 0u64..1000, pair in any::<bool>()) {
        let ds = make_blobs(4, 25, 2, 2.0, seed).unwrap();
        let spec = if pair { NoiseSpec::pair_flip(4, rate) } else { NoiseSpec::symmetric(rate) };
        let noisy = corrupt(&ds, &spec, seed).unwrap();
        for i in 0..noisy.len() {
            prop_assert_eq!(noisy.corrupted()[i], noisy.noisy_labels()[i] != noisy.true_labels()[i]);
        }
        prop_assert_eq!(noisy.true_labels(), ds.true_labels());
        prop_assert_eq!(&noisy, &corrupt(&ds, &spec, seed).unwrap());
    }
}
