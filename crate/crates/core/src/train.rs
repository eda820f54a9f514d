//! Gradient-based optimization of the noise parameters against supervised
//! trajectories.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{trajectory_pass, TrajectoryPass};
use crate::data::SupervisedTrajectory;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::noise_est::estimate_noise;
use crate::optim::{Adam, Optimizer, Sgd};
use crate::params::{NoiseParams, Parameterization};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Squared error over the model's loss mask.
    #[default]
    MaskedMse,
    /// Squared error with one weight per state component.
    Weighted(Vec<f64>),
}

impl LossKind {
    pub fn weights(&self, model: &ModelSpec) -> Result<Vec<f64>> {
        let n = model.state_dim();
        match self {
            LossKind::MaskedMse => {
                let mut w = vec![0.0; n];
                for i in model.mask_indices() {
                    w[i] = 1.0;
                }
                Ok(w)
            }
            LossKind::Weighted(w) => {
                if w.len() != n {
                    return Err(Error::invalid(format!("{} loss weights for state dimension {n}", w.len())));
                }
                if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::invalid("loss weights must be finite and non-negative"));
                }
                Ok(w.clone())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Starting point of the optimization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// The supervised residual estimate of the training data.
    #[default]
    WarmStart,
    /// Identity covariances.
    ColdStart,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Lower bound on optimizer steps; extra epochs run until it is met.
    pub min_steps: usize,
    pub optimizer: OptimizerKind,
    pub loss: LossKind,
    pub seed: u64,
    /// Share of trajectories held out for validation and best-step selection.
    pub validation_fraction: f64,
    pub validation_interval: usize,
    pub parameterization: Parameterization,
    pub init: InitStrategy,
    /// Optimize off-diagonal Cholesky entries in units of their row's
    /// initial diagonal factor, so the step size is independent of the
    /// physical units of each coordinate.
    pub precondition: bool,
    /// Rescales gradients whose Euclidean norm exceeds this.
    pub grad_clip: Option<f64>,
    /// Smallest eigenvalue of the warm-start matrices relative to their mean
    /// variance; lifts singular and near-singular estimates.
    pub jitter: f64,
    /// Smallest eigenvalue allowed in the warm-start matrices.
    pub min_variance: f64,
    /// Training stops when the batch loss exceeds this multiple of the first one.
    pub divergence_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            lr: 0.01,
            epochs: 1,
            min_steps: 0,
            optimizer: OptimizerKind::Adam,
            loss: LossKind::MaskedMse,
            seed: 0,
            validation_fraction: 0.0,
            validation_interval: 10,
            parameterization: Parameterization::FullCholesky,
            init: InitStrategy::WarmStart,
            precondition: true,
            grad_clip: None,
            jitter: 1e-9,
            min_variance: 0.0,
            divergence_factor: 1e12,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation fraction must be in [0, 1)"));
        }
        if self.validation_interval == 0 {
            return Err(Error::invalid("validation interval must be positive"));
        }
        if !(self.jitter >= 0.0 && self.min_variance >= 0.0 && self.divergence_factor > 1.0) {
            return Err(Error::invalid(
                "jitter and minimum variance must be >= 0, divergence factor > 1",
            ));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::invalid("gradient clip must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Batch loss before each optimizer step.
    pub losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
    /// `(step, loss)`; step `k` is evaluated after `k` optimizer steps.
    pub validation: Vec<(usize, f64)>,
    /// Step whose parameters were returned.
    pub best_step: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub initial: NoiseParams,
    pub params: NoiseParams,
    pub trace: TrainTrace,
}

fn scored_steps(model: &ModelSpec, batch: &[SupervisedTrajectory]) -> usize {
    batch.iter().map(|t| t.len().saturating_sub(model.warmup_steps)).sum()
}

fn passes(
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    model: &ModelSpec,
    batch: &[SupervisedTrajectory],
    weights: &[f64],
    want_grad: bool,
) -> Result<Vec<TrajectoryPass>> {
    batch
        .par_iter()
        .enumerate()
        .map(|(k, tr)| trajectory_pass(model, q, r, tr, weights, want_grad).map_err(|e| e.for_trajectory(k)))
        .collect()
}

fn check_batch(model: &ModelSpec, batch: &[SupervisedTrajectory]) -> Result<()> {
    if scored_steps(model, batch) == 0 {
        return Err(Error::InsufficientData("batch has no scored steps".into()));
    }
    for tr in batch {
        tr.validate()?;
    }
    Ok(())
}

/// Weighted squared error of the filter with noise `(Q, R)`, summed over
/// all scored steps of the batch.
pub fn matrix_loss(
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    model: &ModelSpec,
    batch: &[SupervisedTrajectory],
    loss: &LossKind,
) -> Result<f64> {
    check_batch(model, batch)?;
    let weights = loss.weights(model)?;
    Ok(passes(q, r, model, batch, &weights, false)?.iter().map(|p| p.loss).sum())
}

/// Summed weighted squared error of the filter with `params`.
pub fn batch_loss(
    params: &NoiseParams,
    model: &ModelSpec,
    batch: &[SupervisedTrajectory],
    loss: &LossKind,
) -> Result<f64> {
    let (q, r) = params.materialize();
    matrix_loss(&q, &r, model, batch, loss)
}

/// Batch loss and its gradient with respect to the flat parameter vector.
pub fn grad(
    params: &NoiseParams,
    model: &ModelSpec,
    batch: &[SupervisedTrajectory],
    loss: &LossKind,
) -> Result<(f64, Vec<f64>)> {
    check_batch(model, batch)?;
    let weights = loss.weights(model)?;
    let (q, r) = params.materialize();
    let results = passes(&q, &r, model, batch, &weights, true)?;
    let mut total = 0.0;
    let mut q_bar = DMatrix::zeros(q.nrows(), q.ncols());
    let mut r_bar = DMatrix::zeros(r.nrows(), r.ncols());
    // Summed in batch order so the result does not depend on scheduling.
    for p in &results {
        total += p.loss;
        q_bar += p.q_bar.as_ref().expect("gradient requested");
        r_bar += p.r_bar.as_ref().expect("gradient requested");
    }
    let mut g = params.q.backward(&q_bar);
    g.extend(params.r.backward(&r_bar));
    Ok((total, g))
}

/// Starting parameters for `cfg.init`.
pub fn initial_params(
    data: &[SupervisedTrajectory],
    model: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<NoiseParams> {
    match cfg.init {
        InitStrategy::WarmStart => {
            let (q, r) = estimate_noise(data, model)?;
            let floor = |m: DMatrix<f64>| {
                let lo = m.symmetric_eigenvalues().min();
                if lo < cfg.min_variance {
                    let d = m.nrows();
                    m + DMatrix::identity(d, d) * (cfg.min_variance - lo)
                } else {
                    m
                }
            };
            NoiseParams::from_matrices(&floor(q), &floor(r), cfg.parameterization, cfg.jitter)
        }
        InitStrategy::ColdStart => Ok(NoiseParams::identity(
            model.state_dim(),
            model.obs_dim(),
            cfg.parameterization,
        )),
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Optimizes the noise parameters from `cfg.init`.
pub fn train(
    data: &[SupervisedTrajectory],
    model: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    model.validate()?;
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("no training trajectories".into()));
    }
    if cfg.batch_size > data.len() {
        return Err(Error::invalid(format!(
            "batch size {} exceeds the {} training trajectories",
            cfg.batch_size,
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let n_val = if cfg.validation_fraction > 0.0 {
        ((data.len() as f64 * cfg.validation_fraction).ceil() as usize).min(data.len() - 1)
    } else {
        0
    };
    let validation: Vec<SupervisedTrajectory>;
    let training: Vec<SupervisedTrajectory>;
    if n_val > 0 {
        order.shuffle(&mut rng);
        validation = order[..n_val].iter().map(|&i| data[i].clone()).collect();
        let mut rest = order[n_val..].to_vec();
        rest.sort_unstable();
        training = rest.iter().map(|&i| data[i].clone()).collect();
    } else {
        validation = Vec::new();
        training = data.to_vec();
    }

    let initial = initial_params(&training, model, cfg)?;
    let scales: Vec<f64> = if cfg.precondition {
        let mut s = initial.q.scales();
        s.extend(initial.r.scales());
        s
    } else {
        vec![1.0; initial.len()]
    };
    // The optimizer sees phi = theta / scales.
    let mut phi: Vec<f64> = initial.flat().iter().zip(&scales).map(|(t, s)| t / s).collect();
    let mut optimizer: Box<dyn Optimizer> = match cfg.optimizer {
        OptimizerKind::Adam => Box::new(Adam::with_defaults(phi.len())),
        OptimizerKind::Sgd => Box::new(Sgd),
    };

    let batches_per_epoch = training.len().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches_per_epoch).max(cfg.min_steps);
    let mut trace = TrainTrace::default();
    let mut best = (f64::INFINITY, 0usize, initial.clone());
    let mut reference: Option<f64> = None;

    let mut evaluate = |step: usize, p: &NoiseParams, trace: &mut TrainTrace| -> Result<()> {
        if validation.is_empty() {
            return Ok(());
        }
        let v = batch_loss(p, model, &validation, &cfg.loss)?;
        trace.validation.push((step, v));
        if v < best.0 {
            best = (v, step, p.clone());
        }
        Ok(())
    };
    evaluate(0, &initial, &mut trace)?;

    let mut step = 0usize;
    let mut current = initial.clone();
    'outer: while step < total_steps {
        let mut perm: Vec<usize> = (0..training.len()).collect();
        perm.shuffle(&mut rng);
        for chunk in perm.chunks(cfg.batch_size) {
            if step >= total_steps {
                break 'outer;
            }
            let batch: Vec<SupervisedTrajectory> = chunk.iter().map(|&i| training[i].clone()).collect();
            let (loss, mut g) = grad(&current, model, &batch, &cfg.loss)?;
            let first = *reference.get_or_insert(loss);
            if !loss.is_finite() || loss > cfg.divergence_factor * first.max(f64::MIN_POSITIVE) {
                trace.losses.push(loss);
                return Err(Error::Divergence {
                    step,
                    loss,
                    trace: Box::new(trace),
                });
            }
            g.iter_mut().zip(&scales).for_each(|(g, s)| *g *= s);
            let norm = l2(&g);
            trace.losses.push(loss);
            trace.grad_norms.push(norm);
            if let Some(c) = cfg.grad_clip {
                if norm > c {
                    g.iter_mut().for_each(|x| *x *= c / norm);
                }
            }
            optimizer.step(&mut phi, &g, cfg.lr)?;
            let theta: Vec<f64> = phi.iter().zip(&scales).map(|(p, s)| p * s).collect();
            current = current.with_flat(&theta)?;
            let (q, r) = current.materialize();
            if q.cholesky().is_none() || r.cholesky().is_none() {
                return Err(Error::NotPositiveDefinite(format!(
                    "noise covariance lost positive definiteness after step {}",
                    step + 1
                )));
            }
            step += 1;
            if step.is_multiple_of(cfg.validation_interval) || step == total_steps {
                evaluate(step, &current, &mut trace)?;
            }
        }
    }

    let params = if validation.is_empty() {
        trace.best_step = step;
        current
    } else {
        trace.best_step = best.1;
        best.2
    };
    log::debug!(
        "trained {} steps, best step {}, final batch loss {:?}",
        step,
        trace.best_step,
        trace.losses.last()
    );
    Ok(TrainOutcome {
        initial,
        params,
        trace,
    })
}
