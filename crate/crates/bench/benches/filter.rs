use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use okf_core::sim::Scenario;
use okf_core::train::{grad, train, LossKind};
use okf_core::{estimate_noise, run_filter, Baseline, NoiseParams, Parameterization, TrainConfig};

fn setup(preset: &str, baseline: Baseline) -> (okf_core::ModelSpec, okf_core::Dataset) {
    let scenario = Scenario::preset(preset).unwrap();
    let (train_set, _) = scenario.simulate_split(100, 1).unwrap();
    (scenario.model(baseline).unwrap(), train_set.dataset)
}

fn filter(c: &mut Criterion) {
    let mut g = c.benchmark_group("rollout");
    for (preset, baseline) in [("toy", Baseline::Kf), ("close", Baseline::Ekf), ("lidar", Baseline::Kf)] {
        let (model, ds) = setup(preset, baseline);
        let (q, r) = estimate_noise(&ds.trajectories, &model).unwrap();
        let traj = &ds.trajectories[0];
        g.bench_function(format!("{preset}/{}", baseline.name()), |b| {
            b.iter(|| run_filter(&model, &q, &r, black_box(&traj.observations)).unwrap())
        });
    }
    g.finish();
}

fn gradient(c: &mut Criterion) {
    let mut g = c.benchmark_group("grad_batch10");
    for (preset, baseline) in [("toy", Baseline::Kf), ("close", Baseline::Ekf)] {
        let (model, ds) = setup(preset, baseline);
        let (q, r) = estimate_noise(&ds.trajectories, &model).unwrap();
        let params = NoiseParams::from_matrices(&q, &r, Parameterization::FullCholesky, 1e-9).unwrap();
        let batch = &ds.trajectories[..10];
        g.bench_function(format!("{preset}/{}", baseline.name()), |b| {
            b.iter(|| grad(&params, &model, black_box(batch), &LossKind::MaskedMse).unwrap())
        });
    }
    g.finish();
}

fn estimation(c: &mut Criterion) {
    let (model, ds) = setup("toy", Baseline::Kf);
    c.bench_function("estimate_noise/toy_100", |b| {
        b.iter(|| estimate_noise(black_box(&ds.trajectories), &model).unwrap())
    });
}

fn training(c: &mut Criterion) {
    let (model, ds) = setup("toy", Baseline::Kf);
    let cfg = TrainConfig::default();
    let mut g = c.benchmark_group("train");
    g.sample_size(10);
    g.bench_function("toy_100_one_epoch", |b| {
        b.iter_batched(|| cfg.clone(), |cfg| train(&ds.trajectories, &model, &cfg).unwrap(), BatchSize::SmallInput)
    });
    g.finish();
}

criterion_group!(benches, filter, gradient, estimation, training);
criterion_main!(benches);
