use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use reset_opt::data::{corrupt, make_blobs, NoiseSpec};
use reset_opt::diag::{decompose_dataset_gradient, estimate_diffusion};
use reset_opt::langevin::{simulate_fpt, LangevinConfig};
use reset_opt::nn::{LossKind, Network, NetworkSpec, Pass};
use reset_opt::par::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn fpt(c: &mut Criterion) {
    let cfg = LangevinConfig::new(1.0, 0.0, 1.0, 2.5396, 1e-3);
    let mut g = c.benchmark_group("simulate_fpt_20k");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| simulate_fpt(&cfg, 20_000, 7, exec).unwrap())
        });
    }
    g.finish();
}

fn gradients(c: &mut Criterion) {
    let clean = make_blobs(10, 200, 32, 3.0, 1).unwrap();
    let ds = corrupt(&clean, &NoiseSpec::symmetric(0.4), 1).unwrap();
    let net = Network::new(NetworkSpec::fcn(vec![32], 50, 10, true)).unwrap();
    let params = net.init_params(1);
    let stats = net.init_running_stats();
    let loss = LossKind::CrossEntropy;

    let mut g = c.benchmark_group("per_sample_grads_2000");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                net.per_sample_grads(&params, &stats, ds.features(), ds.noisy_labels(), loss, Pass::eval(), exec)
                    .unwrap()
            })
        });
    }
    g.finish();

    let mut g = c.benchmark_group("decompose_dataset_2000");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| decompose_dataset_gradient(&net, &params, &stats, &ds, loss, Pass::train(3), 256, exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("estimate_diffusion_2000");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| estimate_diffusion(&net, &params, &stats, &ds, loss, 0.01, 16, ds.len(), 1, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, fpt, gradients);
criterion_main!(benches);
