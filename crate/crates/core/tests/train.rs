use rand::RngCore;
use reset_opt::data::*;
use reset_opt::nn::*;
use reset_opt::rng::{stream_rng, Stream};
use reset_opt::train::*;

struct Setup {
    net: Network,
    train: LabeledDataset,
    val: LabeledDataset,
    test: LabeledDataset,
}

fn setup(bn: bool, seed: u64) -> Setup {
    let full = make_blobs(4, 120, 6, 2.5, seed).unwrap();
    let (train, val) = split(&full, 0.25, seed).unwrap();
    let train = corrupt(&train, &NoiseSpec::symmetric(0.4), seed).unwrap();
    let test = make_blobs(4, 40, 6, 2.5, seed + 100).unwrap();
    let net = Network::new(NetworkSpec::fcn(vec![6], 12, 4, bn)).unwrap();
    Setup { net, train, val, test }
}

fn config(r: f64, iters: u64) -> TrainConfig {
    TrainConfig {
        lr: 5e-2,
        momentum: 0.0,
        batch_size: 8,
        total_iters: iters,
        loss: LossKind::CrossEntropy,
        sampling: SamplingMode::WithReplacement,
        lr_decay: None,
        reset: ResetConfig {
            reset_probability: r,
            patience: 100,
            validation_interval: 10,
            ..ResetConfig::default()
        },
        eval_chunk: 64,
    }
}

/// Plain minibatch SGD written out directly, tracking the best validation
/// loss with the same cadence and tie rule.
fn plain_sgd(s: &Setup, cfg: &TrainConfig, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let net = &s.net;
    let mut params = net.init_params(seed);
    let mut stats = net.init_running_stats();
    let momenta = net.bn_momenta();
    let mut buffer = None;
    let mut sampler = BatchSampler::new(cfg.batch_size, seed, cfg.sampling).unwrap();
    let (mut best, mut best_loss) = (params.flatten(), f64::INFINITY);
    let mut val_losses = Vec::new();
    for t in 0..cfg.total_iters {
        let idx = sampler.batch_at(t, s.train.len()).unwrap();
        let x = s.train.features().select_rows(&idx).unwrap();
        let y: Vec<usize> = idx.iter().map(|&i| s.train.noisy_labels()[i]).collect();
        let dropout = stream_rng(seed, Stream::Dropout, t).next_u64();
        let lg = net.loss_and_grad(&params, &stats, &x, &y, cfg.loss, Pass::train(dropout)).unwrap();
        stats.absorb(&lg.batch_stats, &momenta);
        sgd_step(params.values_mut(), &mut buffer, &lg.grad, cfg.lr, cfg.momentum).unwrap();
        if (t + 1) % cfg.reset.validation_interval == 0 {
            let (vl, _) = net
                .evaluate(&params, &stats, s.val.features(), s.val.noisy_labels(), cfg.loss, cfg.eval_chunk)
                .unwrap();
            if vl < best_loss {
                best_loss = vl;
                best = params.flatten();
            }
            val_losses.push(vl);
        }
    }
    (params.flatten(), best, val_losses)
}

#[test]
fn zero_rate_is_plain_sgd() {
    for (bn, momentum) in [(false, 0.0), (true, 0.0), (true, 0.9)] {
        let s = setup(bn, 1);
        let mut cfg = config(0.0, 400);
        cfg.momentum = momentum;
        let out = train(&s.net, &s.train, &s.val, &s.test, &cfg, 1, &mut NoObserver).unwrap();
        let (_, best, val) = plain_sgd(&s, &cfg, 1);
        assert_eq!(out.best.flatten(), best);
        let got: Vec<f64> = out.rows.iter().map(|r| r.val_loss).collect();
        assert_eq!(got, val);
        assert_eq!(out.resets, 0);
        assert!(out.rows.iter().all(|r| !r.reset_event));
    }
}

#[test]
fn returned_best_matches_metrics_table() {
    let s = setup(true, 2);
    let mut cfg = config(0.05, 600);
    cfg.reset.patience = 20;
    let out = train(&s.net, &s.train, &s.val, &s.test, &cfg, 2, &mut NoObserver).unwrap();
    let best_row = out
        .rows
        .iter()
        .fold(None::<&MetricsRow>, |b, r| match b {
            Some(b) if b.val_loss <= r.val_loss => Some(b),
            _ => Some(r),
        })
        .unwrap();
    assert_eq!(best_row.iteration, out.best_iteration);
    assert_eq!(Some(best_row.val_loss), out.best_metric);
    let (vl, va) = s
        .net
        .evaluate(&out.best, &out.best_running, s.val.features(), s.val.noisy_labels(), LossKind::CrossEntropy, 64)
        .unwrap();
    assert_eq!(vl, best_row.val_loss);
    assert_eq!(va, best_row.val_accuracy);
    assert!(out.resets > 0);
    assert_eq!(out.status, RunStatus::Completed);
    for r in &out.rows {
        let m = r.memorization_fraction.unwrap();
        assert!((0.0..=1.0).contains(&m));
    }
}

#[test]
fn runs_are_bit_reproducible() {
    let s = setup(true, 3);
    let mut cfg = config(0.02, 500);
    cfg.reset.perturbation_eps = 0.01;
    cfg.momentum = 0.5;
    let a = train(&s.net, &s.train, &s.val, &s.test, &cfg, 3, &mut NoObserver).unwrap();
    let b = train(&s.net, &s.train, &s.val, &s.test, &cfg, 3, &mut NoObserver).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.best.flatten(), b.best.flatten());
    let c = train(&s.net, &s.train, &s.val, &s.test, &cfg, 4, &mut NoObserver).unwrap();
    assert_ne!(a.rows, c.rows);
}

#[test]
fn rate_one_pins_parameters_to_the_checkpoint() {
    let s = setup(true, 4);
    let cfg = config(1.0, 800);
    struct Watch(Vec<(bool, f64, f64)>);
    impl Observer for Watch {
        fn on_validation(&mut self, _: &Network, st: &TrainState, row: &MetricsRow) -> reset_opt::Result<()> {
            if let Some(c) = &st.checkpoint {
                // right after the validation of this row, params sit on the checkpoint
                let pinned = st.params.values() == c.values.as_slice();
                self.0.push((pinned, row.val_loss, st.best_metric.unwrap()));
            }
            Ok(())
        }
    }
    let mut w = Watch(Vec::new());
    let out = train(&s.net, &s.train, &s.val, &s.test, &cfg, 4, &mut w).unwrap();
    assert!(!w.0.is_empty(), "checkpoint never armed");
    // the arming row itself may still be off the checkpoint
    for &(pinned, vl, best) in &w.0[1..] {
        assert!(pinned);
        assert_eq!(vl, best);
    }
    let armed_rows = w.0.len() as u64;
    assert_eq!(out.resets, (armed_rows - 1) * cfg.reset.validation_interval);
}

#[test]
fn divergence_keeps_partial_metrics() {
    let s = setup(false, 5);
    let mut cfg = config(0.0, 400);
    cfg.lr = 1e250;
    let out = train(&s.net, &s.train, &s.val, &s.test, &cfg, 5, &mut NoObserver).unwrap();
    match out.status {
        RunStatus::Diverged { iteration, .. } => assert!(iteration < 400),
        RunStatus::Completed => panic!("expected divergence"),
    }
    assert!(out.rows.len() < 40);
    assert!(out.rows.iter().all(|r| r.val_loss.is_finite()));
}

#[test]
fn invalid_configs_are_rejected() {
    let s = setup(false, 6);
    let mut cfg = config(0.0, 5);
    assert!(matches!(train(&s.net, &s.train, &s.val, &s.test, &cfg, 0, &mut NoObserver), Err(reset_opt::Error::Config(_))));
    cfg.total_iters = 100;
    cfg.reset.reset_probability = 1.5;
    assert!(matches!(train(&s.net, &s.train, &s.val, &s.test, &cfg, 0, &mut NoObserver), Err(reset_opt::Error::Config(_))));
    let wrong = make_blobs(4, 10, 5, 1.0, 0).unwrap();
    assert!(train(&s.net, &wrong, &s.val, &s.test, &config(0.0, 100), 0, &mut NoObserver).is_err());
}
