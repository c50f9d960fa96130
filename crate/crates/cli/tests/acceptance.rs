//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Tolerances are fixed here and never relaxed.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reset_opt::data::*;
use reset_opt::diag::*;
use reset_opt::langevin::*;
use reset_opt::nn::*;
use reset_opt::par::Execution;
use reset_opt_cli::commands::{cmd_diagnose, cmd_sweep, RunOptions, SweepReport};
use reset_opt_cli::config::{AxisValue, ExperimentConfig};
use reset_opt_cli::output::OutputDir;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------- theory

fn c1_mfpt_monte_carlo() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let e_minus_1 = std::f64::consts::E - 1.0;
    ok &= (mfpt_closed_form(1.0, 0.0, 1.0, 1.0).unwrap() - e_minus_1).abs() < 1e-12;
    for (k, gamma) in [0.5, 1.0, 2.5396, 5.0].into_iter().enumerate() {
        let cfg = LangevinConfig::new(1.0, 0.0, 1.0, gamma, 1e-3);
        let closed = mfpt_closed_form(1.0, 0.0, 1.0, gamma).unwrap();
        let batch = simulate_fpt(&cfg, 100_000, 1000 + k as u64, Execution::Parallel).unwrap();
        let r = batch.summarize(closed).unwrap();
        let good = r.agrees(0.05, 3.0) && r.censored == 0;
        ok &= good;
        parts.push(format!(
            "γ={gamma}: {:.4}±{:.4} vs {:.4} ({:+.2}%)",
            r.estimate,
            r.std_error,
            closed,
            100.0 * r.relative_gap
        ));
    }
    outcome(ok, parts.join("; "))
}

fn c2_renewal_identity() -> Outcome {
    let mut worst = 0.0f64;
    let mut n = 0;
    for d in [0.5, 1.0, 2.0] {
        for v in [-1.0, 0.0, 1.0] {
            for (l, gamma) in [(0.5, 0.3), (1.0, 1.0), (2.0, 4.0)] {
                let lt = laplace_fpt(d, v, l, gamma).unwrap();
                let a = mfpt_renewal(lt, gamma).unwrap();
                let b = mfpt_closed_form(d, v, l, gamma).unwrap();
                worst = worst.max((a - b).abs() / b.abs());
                n += 1;
            }
        }
    }
    outcome(worst <= 1e-12, format!("{n} grid points, max relative gap {worst:.2e} (tol 1e-12)"))
}

/// Root of `z/2 = 1 - exp(-z)` on (1, 2) by bisection.
fn z_star() -> f64 {
    let f = |z: f64| z / 2.0 - 1.0 + (-z).exp();
    let (mut lo, mut hi) = (1.0f64, 2.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(lo) * f(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn c3_peclet_shape() -> Outcome {
    let grid: Vec<f64> = (0..40).map(|i| 10f64.powf(-3.0 + 5.0 * i as f64 / 39.0)).collect();
    let curve = |v: f64| -> Vec<f64> { grid.iter().map(|&g| mfpt_closed_form(1.0, v, 1.0, g).unwrap()).collect() };
    let low = curve(1.0);
    let argmin = (0..low.len()).min_by(|&a, &b| low[a].total_cmp(&low[b])).unwrap();
    let interior = argmin > 0 && argmin < low.len() - 1;
    let high = curve(4.0);
    let nondecreasing = high.windows(2).all(|w| w[1] >= w[0]);
    let opt = optimal_reset_rate(1.0, 0.0, 1.0).unwrap();
    let z = z_star();
    let gamma_ok = (opt.gamma - 2.5396).abs() <= 1e-3 && (opt.gamma - z * z).abs() <= 1e-6;
    outcome(
        interior && nondecreasing && gamma_ok,
        format!(
            "Pe=0.5 argmin at grid index {argmin}/39 (γ={:.3}); Pe=2 nondecreasing={nondecreasing}; γ*={:.5} (z*²={:.5})",
            grid[argmin],
            opt.gamma,
            z * z
        ),
    )
}

fn c4_benefit_monotonicity() -> Outcome {
    let mut ratios = Vec::new();
    for v in [0.0, 0.25, 0.5, 1.0] {
        let t0 = mfpt_closed_form(1.0, v, 1.0, 0.0).unwrap();
        let opt = optimal_reset_rate(1.0, v, 1.0).unwrap();
        ratios.push(t0 / opt.mfpt);
    }
    let first_infinite = ratios[0].is_infinite();
    let strictly = ratios[1..].windows(2).all(|w| w[0] > w[1]) && ratios[1..].iter().all(|r| r.is_finite());
    outcome(
        first_infinite && strictly,
        format!("T(0)/T(γ*) along Pe = 0, 0.125, 0.25, 0.5: {:?}", ratios.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>()),
    )
}

// ---------------------------------------------------------------- networks

fn random_fcn(seed: u64, bn: bool) -> (Network, ParamSet, Tensor, Vec<usize>, LossKind) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = rng.random_range(2..7);
    let hidden = rng.random_range(3..9);
    let classes = rng.random_range(2..6);
    let b = rng.random_range(3..9);
    let net = Network::new(NetworkSpec::fcn(vec![p], hidden, classes, bn)).unwrap();
    let mut params = net.init_params(seed);
    for v in params.values_mut().iter_mut() {
        *v += rng.random_range(-0.1..0.1);
    }
    let x = Tensor::new(vec![b, p], (0..b * p).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let y = (0..b).map(|_| rng.random_range(0..classes)).collect();
    let loss = if seed.is_multiple_of(2) { LossKind::CrossEntropy } else { LossKind::MeanAbsoluteError };
    (net, params, x, y, loss)
}

fn c5_autodiff() -> Outcome {
    let mut worst = [0.0f64; 2];
    let (mut checked, mut skipped) = (0, 0);
    for seed in 0..100 {
        for (k, bn) in [false, true].into_iter().enumerate() {
            let (net, params, x, y, loss) = random_fcn(10_000 + seed, bn);
            let stats = net.init_running_stats();
            let opts = GradCheck { seed, ..GradCheck::default() };
            let pass = if bn { Pass::train(seed) } else { Pass::eval() };
            let r = finite_diff_report(&net, &params, &stats, &x, &y, loss, pass, opts).unwrap();
            worst[k] = worst[k].max(r.max_rel_error);
            checked += r.checked;
            skipped += r.skipped_kinks;
        }
    }
    outcome(
        worst[0] <= 1e-4 && worst[1] <= 1e-3,
        format!(
            "100 FCNs: no BN {:.2e} (tol 1e-4), frozen BN {:.2e} (tol 1e-3); {checked} coordinates compared, {skipped} ReLU-kink crossings skipped",
            worst[0], worst[1]
        ),
    )
}

fn small_problem(seed: u64, bn: bool) -> (Network, ParamSet, RunningStats, LabeledDataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = rng.random_range(3..6);
    let dim = rng.random_range(4..10);
    let clean = make_blobs(classes, 60, dim, 2.0, seed).unwrap();
    let ds = corrupt(&clean, &NoiseSpec::symmetric(0.4), seed).unwrap();
    let net = Network::new(NetworkSpec::fcn(vec![dim], rng.random_range(6..16), classes, bn)).unwrap();
    let mut params = net.init_params(seed);
    for v in params.values_mut().iter_mut() {
        *v += rng.random_range(-0.05..0.05);
    }
    let stats = net.init_running_stats();
    (net, params, stats, ds)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn c6_decomposition() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let (net, params, stats, ds) = small_problem(seed, seed % 2 == 0);
        for pass in [Pass::eval(), Pass::train(seed)] {
            let d = decompose_dataset_gradient(&net, &params, &stats, &ds, LossKind::CrossEntropy, pass, 50, Execution::Parallel).unwrap();
            worst = worst.max(d.additivity_error());
            let idx: Vec<usize> = (0..16).map(|i| (i * 7 + seed as usize) % ds.len()).collect();
            let x = ds.features().select_rows(&idx).unwrap();
            let y: Vec<usize> = idx.iter().map(|&i| ds.noisy_labels()[i]).collect();
            let m: Vec<bool> = idx.iter().map(|&i| ds.corrupted()[i]).collect();
            let b = decompose_minibatch_gradient(&net, &params, &stats, &x, &y, &m, LossKind::CrossEntropy, pass).unwrap();
            worst = worst.max(b.additivity_error());
        }
    }

    // unbiasedness, projected on the dataset parts and a fixed random direction
    let (net, params, stats, ds) = small_problem(99, true);
    let loss = LossKind::CrossEntropy;
    let full = decompose_dataset_gradient(&net, &params, &stats, &ds, loss, Pass::eval(), 64, Execution::Parallel).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let random: Vec<f64> = (0..full.g_total.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dirs = [full.g_correct_hat.clone(), full.g_wrong_hat.clone(), random];
    let mut sampler = BatchSampler::new(16, 17, SamplingMode::WithReplacement).unwrap();
    let mut proj = vec![vec![Vec::new(); 3]; 2];
    for _ in 0..10_000 {
        let idx = sampler.sample_batch(ds.len()).unwrap();
        let x = ds.features().select_rows(&idx).unwrap();
        let y: Vec<usize> = idx.iter().map(|&i| ds.noisy_labels()[i]).collect();
        let m: Vec<bool> = idx.iter().map(|&i| ds.corrupted()[i]).collect();
        let b = decompose_minibatch_gradient(&net, &params, &stats, &x, &y, &m, loss, Pass::eval()).unwrap();
        for (k, u) in dirs.iter().enumerate() {
            proj[0][k].push(dot(&b.g_correct_hat, u));
            proj[1][k].push(dot(&b.g_wrong_hat, u));
        }
    }
    let mut max_z = 0.0f64;
    for (part, target) in [&full.g_correct_hat, &full.g_wrong_hat].into_iter().enumerate() {
        for (k, u) in dirs.iter().enumerate() {
            let xs = &proj[part][k];
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let se = (xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
            max_z = max_z.max((mean - dot(target, u)).abs() / se);
        }
    }
    outcome(
        worst <= 1e-12 && max_z <= 3.0,
        format!("max additivity error {worst:.2e} (tol 1e-12); minibatch mean vs dataset parts: max |z| = {max_z:.2} over 6 projections, 10000 batches (tol 3)"),
    )
}

fn c7_diffusion() -> Outcome {
    let (net, params, stats, ds) = small_problem(7, true);
    let loss = LossKind::CrossEntropy;
    let lr = 0.05;
    let n = ds.len();
    let e16 = estimate_diffusion(&net, &params, &stats, &ds, loss, lr, 16, n, 1, Execution::Parallel).unwrap();
    let e32 = estimate_diffusion(&net, &params, &stats, &ds, loss, lr, 32, n, 1, Execution::Parallel).unwrap();
    let exact_half = e32.trace_d * 2.0 == e16.trace_d && e16.trace_sigma == e32.trace_sigma;
    let (energy, se) = minibatch_noise_energy(&net, &params, &stats, &ds, loss, lr, 16, 1000, 3).unwrap();
    // E|xi|^2 = 2 trace_D with the population (1/N) covariance
    let predicted = 2.0 * e16.trace_d * (n - 1) as f64 / n as f64;
    let rel = (energy - predicted).abs() / predicted;
    outcome(
        exact_half && rel < 0.10,
        format!(
            "trace_D(B=16)={:.6e} = 2 x trace_D(B=32): {exact_half}; empirical E|xi|^2 {energy:.4e}±{se:.1e} vs 2 trace_D {predicted:.4e} ({:.1}%, tol 10%)",
            e16.trace_d,
            100.0 * rel
        ),
    )
}

// ---------------------------------------------------------------- training

const BLOBS: &str = r#"
repetitions = 5
seed_base = 0

[data]
source = "blobs"
val_fraction = 0.3333333333333333
noise = { kind = "symmetric", rate = 0.4 }

[data.blobs]
classes = 10
per_class = 300
test_per_class = 100
dim = 32
separation = 3.0

[network]
preset = "fcn"
hidden = 50
batch_norm = true

[train]
lr = 0.01
batch_size = 16
total_iters = 20000
loss = "cross_entropy"

[train.reset]
reset_probability = 0.0
patience = 1000
validation_interval = 20
"#;

fn sweep(extra: &str) -> SweepReport {
    let cfg = ExperimentConfig::parse(&format!("{BLOBS}\n{extra}")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut out = OutputDir::create(dir.path()).unwrap();
    cmd_sweep(&cfg, &mut out, RunOptions::default()).unwrap()
}

/// Seed-averaged memorization trace.
fn mean_trace(runs: &[reset_opt_cli::experiment::RunSummary]) -> Vec<f64> {
    let len = runs.iter().map(|r| r.rows.len()).min().unwrap_or(0);
    (0..len)
        .map(|i| runs.iter().map(|r| r.rows[i].memorization_fraction.unwrap()).sum::<f64>() / runs.len() as f64)
        .collect()
}

fn peak_final(trace: &[f64]) -> (f64, f64) {
    (trace.iter().cloned().fold(f64::MIN, f64::max), *trace.last().unwrap())
}

fn c8_resetting_helps() -> Outcome {
    let rep = sweep("[sweep]\naxis = \"r\"\nr_values = [0.0, 1e-3, 1e-2]");
    let mean_loss = |r: f64| {
        let p = rep.at(&AxisValue::None, r).unwrap();
        assert!(p.runs.iter().all(|x| x.completed));
        p.runs.iter().map(|x| x.best_val_loss.unwrap()).sum::<f64>() / p.runs.len() as f64
    };
    let (l0, l3, l2) = (mean_loss(0.0), mean_loss(1e-3), mean_loss(1e-2));
    let a = l3 < l0 || l2 < l0;
    let best_r = if l3 <= l2 { 1e-3 } else { 1e-2 };
    let (p0, f0) = peak_final(&mean_trace(&rep.at(&AxisValue::None, 0.0).unwrap().runs));
    let (pr, fr) = peak_final(&mean_trace(&rep.at(&AxisValue::None, best_r).unwrap().runs));
    let b = p0 - f0 >= 0.05 && pr - fr <= 0.05;
    outcome(
        a && b,
        format!(
            "(a) mean best val loss r=0 {l0:.4}, r=1e-3 {l3:.4}, r=1e-2 {l2:.4}; (b) mem frac r=0 peak {p0:.3} -> final {f0:.3} (drop >= 0.05), r={best_r} peak {pr:.3} -> final {fr:.3} (drop <= 0.05)"
        ),
    )
}

fn c9_monotonicity() -> Outcome {
    let rs = "r_values = [0.0, 1e-3, 1e-2, 5e-2]";
    let by_b = sweep(&format!("[sweep]\naxis = \"batch_size\"\nvalues = [8, 64]\n{rs}"));
    let by_tau = sweep(&format!("[sweep]\naxis = \"tau\"\nvalues = [0.2, 0.6]\n{rs}"));
    let m = |rep: &SweepReport, v: AxisValue| rep.min_rdvloss(&v).unwrap();
    let (b8, b64) = (m(&by_b, AxisValue::Int(8)), m(&by_b, AxisValue::Int(64)));
    let (t2, t6) = (m(&by_tau, AxisValue::Real(0.2)), m(&by_tau, AxisValue::Real(0.6)));
    let pass_b = b8.1.mean < b64.1.mean;
    let pass_t = t6.1.mean < t2.1.mean;
    let fmt = |(r, s): (f64, reset_opt_cli::aggregate::Stat)| format!("{:+.2}%±{:.2}% @r={r}", 100.0 * s.mean, 100.0 * s.se.unwrap_or(0.0));
    outcome(
        pass_b && pass_t,
        format!(
            "min RDVLoss B=8 {} vs B=64 {} [{}]; tau=0.6 {} vs tau=0.2 {} [{}]",
            fmt(b8),
            fmt(b64),
            if pass_b { "ok" } else { "wrong order" },
            fmt(t6),
            fmt(t2),
            if pass_t { "ok" } else { "wrong order" }
        ),
    )
}

fn c10_batch_norm_orthogonality() -> Outcome {
    let text = BLOBS
        .replace("batch_size = 16", "batch_size = 8")
        .replace("total_iters = 20000", "total_iters = 10000");
    let cfg = ExperimentConfig::parse(&format!(
        "{text}\n[diagnose]\nevery = 100\ndiffusion_samples = 64\nbatch_norm_pair = true\ntrain_mode = true\nchunk = 256\n"
    ))
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut out = OutputDir::create(dir.path()).unwrap();
    let rep = cmd_diagnose(&cfg, &mut out, RunOptions::default()).unwrap();
    let avg = |variant: &str, train_mode: bool| {
        let v: Vec<f64> = rep
            .runs
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| if train_mode { r.mean_abs_cos_cw_train_mode() } else { r.mean_abs_cos_cw() }.unwrap())
            .collect();
        (v.iter().sum::<f64>() / v.len() as f64, v)
    };
    let (bn, bn_seeds) = avg("bn", true);
    let (plain, plain_seeds) = avg("no_bn", true);
    let (bn_eval, _) = avg("bn", false);
    let (plain_eval, _) = avg("no_bn", false);
    let wins = bn_seeds.iter().zip(&plain_seeds).filter(|(a, b)| a < b).count();
    outcome(
        bn < plain,
        format!(
            "mean |cos_cw| (batch statistics, 256-sample chunks) with BN {bn:.3} vs without {plain:.3}; BN lower on {wins}/5 seeds; eval-mode statistics for reference: {bn_eval:.3} vs {plain_eval:.3}"
        ),
    )
}

// ---------------------------------------------------------------- harness

const SMALL: &str = r#"
repetitions = 2
seed_base = 3

[data]
source = "blobs"
val_fraction = 0.25
noise = { kind = "symmetric", rate = 0.4 }

[data.blobs]
classes = 4
per_class = 60
test_per_class = 20
dim = 8
separation = 2.5

[network]
preset = "fcn"
hidden = 12

[train]
lr = 0.05
batch_size = 8
total_iters = 400

[train.reset]
reset_probability = 0.05
patience = 40
validation_interval = 10
perturbation_eps = 0.01

[sweep]
axis = "tau"
values = [0.2, 0.4]
r_values = [0.0, 0.05]

[diagnose]
every = 50
diffusion_samples = 32
smoothing_window = 3
batch_norm_pair = true
train_mode = true

[mfpt]
diffusion = [1.0]
drift = [0.0, 1.0]
gammas = [0.5, 2.0]
trajectories = 2000
"#;

fn csv_files(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn c11_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let bin = env!("CARGO_BIN_EXE_reset-opt");
    let mut compared = 0;
    let mut diffs = Vec::new();
    for cmd in ["mfpt", "train", "sweep", "diagnose"] {
        let outs: Vec<_> = ["a", "b"]
            .iter()
            .map(|tag| {
                let out = dir.path().join(format!("{cmd}_{tag}"));
                let workers = if *tag == "a" { "1" } else { "2" };
                let st = Command::new(bin)
                    .args([cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", workers])
                    .status()
                    .unwrap();
                assert!(st.success(), "{cmd} failed");
                out
            })
            .collect();
        let files = csv_files(&outs[0]);
        if files != csv_files(&outs[1]) || files.is_empty() {
            diffs.push(format!("{cmd}: file sets differ"));
        }
        for f in files {
            compared += 1;
            if std::fs::read(outs[0].join(&f)).unwrap() != std::fs::read(outs[1].join(&f)).unwrap() {
                diffs.push(format!("{cmd}/{}", f.display()));
            }
        }
    }
    outcome(
        diffs.is_empty(),
        format!("{compared} CSV files compared across reruns (1 vs 2 workers); differing: {diffs:?}"),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("MFPT closed form vs Monte Carlo", c1_mfpt_monte_carlo),
        ("renewal identity", c2_renewal_identity),
        ("Péclet shape law and γ*", c3_peclet_shape),
        ("benefit monotonicity in Pe", c4_benefit_monotonicity),
        ("autodiff vs finite differences", c5_autodiff),
        ("drift decomposition exactness", c6_decomposition),
        ("diffusion scaling", c7_diffusion),
        ("resetting helps under label noise", c8_resetting_helps),
        ("stochasticity / noise monotonicity", c9_monotonicity),
        ("batch-norm orthogonality", c10_batch_norm_orthogonality),
        ("determinism", c11_determinism),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        failed += (!o.pass) as usize;
        println!("{tag} [{n:>2}] {name} ({:.1}s): {}", t.elapsed().as_secs_f64(), o.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
