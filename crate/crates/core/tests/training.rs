use nalgebra::{DMatrix, DVector};

use okf_core::params::{NoiseParams, Parameterization};
use okf_core::sim::{Scenario, PRESETS};
use okf_core::spd::SpdMatrix;
use okf_core::train::{batch_loss, initial_params, InitStrategy, LossKind};
use okf_core::{estimate_noise, train, Baseline, Error, ModelSpec, SupervisedTrajectory, TrainConfig};

fn data(preset: &str, n: usize) -> (ModelSpec, Vec<SupervisedTrajectory>) {
    let sc = Scenario::preset(preset).unwrap();
    (sc.model(Baseline::Kf).unwrap(), sc.simulate(n, 0).unwrap().dataset.trajectories)
}

#[test]
fn single_batch_training_makes_progress_on_every_scenario() {
    // From the residual estimate several presets are already within a few
    // percent of the optimum, so progress is measured from identity.
    for preset in PRESETS {
        let (model, batch) = data(preset, 10);
        let cfg = TrainConfig {
            lr: 1e-3,
            min_steps: 200,
            init: InitStrategy::ColdStart,
            ..Default::default()
        };
        let out = train(&batch, &model, &cfg).unwrap();
        assert_eq!(out.trace.losses.len(), 200);
        let before = batch_loss(&out.initial, &model, &batch, &LossKind::MaskedMse).unwrap();
        let after = batch_loss(&out.params, &model, &batch, &LossKind::MaskedMse).unwrap();
        assert!(after <= 0.95 * before, "{preset}: {before} -> {after}");
    }
}

#[test]
fn warm_start_never_gets_worse_on_its_batch() {
    for preset in PRESETS {
        let (model, batch) = data(preset, 10);
        let cfg = TrainConfig {
            lr: 1e-3,
            min_steps: 200,
            ..Default::default()
        };
        let out = train(&batch, &model, &cfg).unwrap();
        let before = batch_loss(&out.initial, &model, &batch, &LossKind::MaskedMse).unwrap();
        let after = batch_loss(&out.params, &model, &batch, &LossKind::MaskedMse).unwrap();
        assert!(after < before, "{preset}: {before} -> {after}");
    }
}

#[test]
fn every_optimizer_step_keeps_covariances_positive_definite() {
    // Training refuses to continue from a step whose Q or R fails to
    // factorize, so completing 200 steps is the property.
    for (preset, p) in [
        ("free", Parameterization::FullCholesky),
        ("lidar", Parameterization::FullCholesky),
        ("close", Parameterization::Diagonal),
    ] {
        let (model, batch) = data(preset, 10);
        let cfg = TrainConfig {
            parameterization: p,
            min_steps: 200,
            ..Default::default()
        };
        let out = train(&batch, &model, &cfg).unwrap_or_else(|e| panic!("{preset}: {e}"));
        let (q, r) = out.params.materialize();
        SpdMatrix::new(q).unwrap();
        SpdMatrix::new(r).unwrap();
    }
}

#[test]
fn identical_seed_gives_identical_trace() {
    let (model, batch) = data("free", 60);
    let cfg = TrainConfig {
        seed: 9,
        validation_fraction: 0.2,
        ..Default::default()
    };
    let a = train(&batch, &model, &cfg).unwrap();
    let b = train(&batch, &model, &cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.params, b.params);
    let c = train(&batch, &model, &TrainConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.trace.losses, c.trace.losses);
}

#[test]
fn loss_is_invariant_to_batch_order() {
    let (model, batch) = data("toy", 7);
    let params = initial_params(&batch, &model, &TrainConfig::default()).unwrap();
    let forward = batch_loss(&params, &model, &batch, &LossKind::MaskedMse).unwrap();
    let mut reversed = batch.clone();
    reversed.reverse();
    let backward = batch_loss(&params, &model, &reversed, &LossKind::MaskedMse).unwrap();
    assert!((forward - backward).abs() <= 1e-12 * forward);
}

#[test]
fn noiseless_exact_model_has_zero_loss() {
    let f = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
    let h = DMatrix::identity(2, 2);
    let x0 = DVector::from_vec(vec![1.0, 0.5]);
    let model = ModelSpec::linear(f.clone(), h, vec![true, true], x0.clone(), DMatrix::identity(2, 2) * 1e-12);
    let states: Vec<DVector<f64>> = (0..6).scan(x0, |x, _| {
        let cur = x.clone();
        *x = &f * &*x;
        Some(cur)
    })
    .collect();
    let tr = SupervisedTrajectory::new("exact", states.clone(), states).unwrap();
    let params = NoiseParams::from_matrices(
        &(DMatrix::identity(2, 2) * 1e-12),
        &DMatrix::identity(2, 2),
        Parameterization::FullCholesky,
        0.0,
    )
    .unwrap();
    let loss = batch_loss(&params, &model, &[tr], &LossKind::MaskedMse).unwrap();
    assert!(loss < 1e-18, "{loss}");
}

#[test]
fn trained_parameters_beat_the_estimate_on_held_out_toy_data() {
    let sc = Scenario::preset("toy").unwrap();
    let (train_set, test_set) = sc.simulate_split(300, 100).unwrap();
    let model = sc.model(Baseline::Kf).unwrap();
    let train_data = &train_set.dataset.trajectories;
    let out = train(train_data, &model, &TrainConfig::default()).unwrap();
    let test = &test_set.dataset.trajectories;
    let est = batch_loss(&out.initial, &model, test, &LossKind::MaskedMse).unwrap();
    let opt = batch_loss(&out.params, &model, test, &LossKind::MaskedMse).unwrap();
    assert!(opt < est, "{opt} vs {est}");
    // The warm start is the residual estimate itself.
    let (_, r) = estimate_noise(train_data, &model).unwrap();
    let (_, r0) = out.initial.materialize();
    assert!((r0 - r).amax() < 1e-6 * 1e4);
}

#[test]
fn validation_returns_the_best_snapshot() {
    let (model, batch) = data("const_a", 80);
    let cfg = TrainConfig {
        validation_fraction: 0.25,
        validation_interval: 2,
        lr: 0.05,
        ..Default::default()
    };
    let out = train(&batch, &model, &cfg).unwrap();
    let best = out
        .trace
        .validation
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    assert_eq!(out.trace.best_step, best.0);
    assert_eq!(out.trace.validation[0].0, 0);
}

#[test]
fn batch_larger_than_data_is_rejected() {
    let (model, batch) = data("toy", 5);
    let err = train(&batch, &model, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)), "{err}");
}

#[test]
fn cold_start_begins_at_identity() {
    let (model, batch) = data("lidar", 10);
    let cfg = TrainConfig {
        init: InitStrategy::ColdStart,
        ..Default::default()
    };
    let p = initial_params(&batch, &model, &cfg).unwrap();
    let (q, r) = p.materialize();
    assert_eq!(q, DMatrix::identity(4, 4));
    assert_eq!(r, DMatrix::identity(2, 2));
}

#[test]
fn min_variance_floors_a_zero_estimate() {
    // Video observations are the ground truth, so the residual R is zero.
    let (model, batch) = data("pedestrian", 20);
    let (_, r) = estimate_noise(&batch, &model).unwrap();
    assert!(r.amax() < 1e-9);
    let cfg = TrainConfig {
        min_variance: 1.0,
        ..Default::default()
    };
    let (_, r) = initial_params(&batch, &model, &cfg).unwrap().materialize();
    assert!(r.symmetric_eigenvalues().min() >= 1.0 - 1e-9);
}
