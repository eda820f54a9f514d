//! Test metrics and paired statistical comparison.

mod experiments;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::SupervisedTrajectory;
use crate::error::{Error, Result};
use crate::filter::run_filter;
use crate::model::ModelSpec;

pub use experiments::{
    diagonal_ablation, generalization_matrix, run_matrix, train_size_sweep, write_csv_records, write_json_records,
    AblationRow, CellResult, ExperimentConfig, GeneralizationResult, SweepPoint, Tuning,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedTrajectory {
    pub index: usize,
    pub id: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub trajectory_ids: Vec<String>,
    /// Time-averaged squared masked-state error of each evaluated trajectory.
    pub per_trajectory_mse: Vec<f64>,
    pub aggregate_mse: f64,
    /// Mean negative log density of the masked true state.
    pub aggregate_nll: Option<f64>,
    pub ci95: (f64, f64),
    pub n: usize,
    pub failed: Vec<FailedTrajectory>,
}

/// Mean and normal-approximation 95% interval with the `N - 1` standard
/// deviation.
pub fn mean_ci95(values: &[f64]) -> (f64, (f64, f64)) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, (f64::NAN, f64::NAN));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = sample_std(values, mean);
    let half = 1.96 * sd / (n as f64).sqrt();
    (mean, (mean - half, mean + half))
}

fn sample_std(values: &[f64], mean: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

fn masked_nll(mean: &DVector<f64>, cov: &DMatrix<f64>, truth: &DVector<f64>, mask: &[usize]) -> Option<f64> {
    let k = mask.len();
    let e = DVector::from_fn(k, |i, _| truth[mask[i]] - mean[mask[i]]);
    let p = DMatrix::from_fn(k, k, |i, j| cov[(mask[i], mask[j])]);
    let chol = p.cholesky()?;
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let maha = e.dot(&chol.solve(&e));
    Some(0.5 * (k as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + maha))
}

struct TrajectoryScore {
    mse: f64,
    nll: Option<f64>,
}

fn score(model: &ModelSpec, q: &DMatrix<f64>, r: &DMatrix<f64>, tr: &SupervisedTrajectory) -> Result<TrajectoryScore> {
    let mask = model.mask_indices();
    let beliefs = run_filter(model, q, r, &tr.observations)?;
    let mut se = 0.0;
    let mut nll = Some(0.0);
    let mut steps = 0usize;
    for (b, x) in beliefs.iter().zip(&tr.states).skip(model.warmup_steps) {
        se += mask.iter().map(|&i| (b.mean[i] - x[i]).powi(2)).sum::<f64>();
        nll = nll.and_then(|acc| masked_nll(&b.mean, &b.cov, x, &mask).map(|v| acc + v));
        steps += 1;
    }
    if steps == 0 {
        return Err(Error::InsufficientData(format!("trajectory '{}' has no scored steps", tr.id)));
    }
    Ok(TrajectoryScore {
        mse: se / steps as f64,
        nll: nll.map(|v| v / steps as f64),
    })
}

/// Filters every test trajectory with `(Q, R)` and scores it. Failing
/// trajectories are excluded and listed in the report.
pub fn evaluate(
    model: &ModelSpec,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    test: &[SupervisedTrajectory],
) -> Result<EvalReport> {
    model.validate()?;
    if q.shape() != (model.state_dim(), model.state_dim()) || r.shape() != (model.obs_dim(), model.obs_dim()) {
        return Err(Error::invalid("noise matrices do not match the model"));
    }
    let scores: Vec<Result<TrajectoryScore>> = test.par_iter().map(|tr| score(model, q, r, tr)).collect();
    let mut ids = Vec::new();
    let mut mses = Vec::new();
    let mut nlls = Vec::new();
    let mut failed = Vec::new();
    for (k, (tr, s)) in test.iter().zip(scores).enumerate() {
        match s {
            Ok(s) => {
                ids.push(tr.id.clone());
                mses.push(s.mse);
                nlls.push(s.nll);
            }
            Err(e) => failed.push(FailedTrajectory {
                index: k,
                id: tr.id.clone(),
                error: e.for_trajectory(k).to_string(),
            }),
        }
    }
    if mses.is_empty() {
        return Err(Error::NumericFailure(format!(
            "all {} test trajectories failed",
            failed.len()
        )));
    }
    let (aggregate_mse, ci95) = mean_ci95(&mses);
    let aggregate_nll = nlls
        .iter()
        .copied()
        .collect::<Option<Vec<f64>>>()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64);
    Ok(EvalReport {
        trajectory_ids: ids,
        n: mses.len(),
        per_trajectory_mse: mses,
        aggregate_mse,
        aggregate_nll,
        ci95,
        failed,
    })
}

impl EvalReport {
    /// Per-trajectory errors of `self` and `other` on the trajectories both
    /// evaluated, in `self`'s order.
    pub fn aligned(&self, other: &EvalReport) -> (Vec<f64>, Vec<f64>) {
        let index: std::collections::HashMap<&str, f64> = other
            .trajectory_ids
            .iter()
            .map(String::as_str)
            .zip(other.per_trajectory_mse.iter().copied())
            .collect();
        self.trajectory_ids
            .iter()
            .zip(&self.per_trajectory_mse)
            .filter_map(|(id, a)| index.get(id.as_str()).map(|b| (*a, *b)))
            .unzip()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    /// `mean(Δ) / std(Δ) · √N`; zero when degenerate.
    pub z: f64,
    pub degenerate: bool,
    /// Two-sided normal p-value of `z`.
    pub p_value: f64,
    /// `mean(a) / mean(b)`.
    pub mse_ratio: f64,
    /// `Δ_i = a_i - b_i`.
    pub deltas: Vec<f64>,
}

/// Paired comparison of per-trajectory errors; positive `z` favors `b`.
pub fn compare_paired(a: &[f64], b: &[f64]) -> Result<ComparisonResult> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "paired comparison of {} and {} errors",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InsufficientData("no paired errors".into()));
    }
    let n = a.len() as f64;
    let deltas: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = deltas.iter().sum::<f64>() / n;
    let sd = sample_std(&deltas, mean);
    let degenerate = !(sd > 0.0);
    let z = if degenerate { 0.0 } else { mean / sd * n.sqrt() };
    let p_value = if degenerate {
        1.0
    } else {
        2.0 * Normal::standard().sf(z.abs())
    };
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mse_ratio = if ma == mb { 1.0 } else { ma / mb };
    Ok(ComparisonResult {
        z,
        degenerate,
        p_value,
        mse_ratio,
        deltas,
    })
}
