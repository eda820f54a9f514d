//! Linear-Gaussian systems that satisfy every assumption of the Kalman
//! filter.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{finish, generate, NoiseTruth, Simulated};
use crate::data::SupervisedTrajectory;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::params::matrix_from_rows;

/// Matrices are given as rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearGaussianConfig {
    pub f: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub prior_mean: Vec<f64>,
    pub prior_cov: Vec<Vec<f64>>,
    pub loss_mask: Vec<bool>,
    pub steps: usize,
    pub n_trajectories: usize,
    pub seed: u64,
    pub first_stream: u64,
}

impl Default for LinearGaussianConfig {
    /// 2-D constant velocity with correlated noise and position observations.
    fn default() -> Self {
        Self {
            f: vec![
                vec![1.0, 0.0, 1.0, 0.0],
                vec![0.0, 1.0, 0.0, 1.0],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
            ],
            h: vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]],
            q: vec![
                vec![0.25, 0.05, 0.1, 0.0],
                vec![0.05, 0.25, 0.0, 0.1],
                vec![0.1, 0.0, 0.2, 0.03],
                vec![0.0, 0.1, 0.03, 0.2],
            ],
            r: vec![vec![4.0, 1.2], vec![1.2, 2.5]],
            prior_mean: vec![0.0, 0.0, 1.0, -0.5],
            prior_cov: vec![
                vec![25.0, 0.0, 0.0, 0.0],
                vec![0.0, 25.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
            ],
            loss_mask: vec![true, true, false, false],
            steps: 40,
            n_trajectories: 1000,
            seed: 0,
            first_stream: 0,
        }
    }
}

struct Mats {
    f: DMatrix<f64>,
    h: DMatrix<f64>,
    q_chol: DMatrix<f64>,
    r_chol: DMatrix<f64>,
    p_chol: DMatrix<f64>,
    mean: DVector<f64>,
}

fn chol(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite(what.into()))
}

impl LinearGaussianConfig {
    fn matrices(&self) -> Result<Mats> {
        let f = matrix_from_rows(&self.f)?;
        let h = matrix_from_rows(&self.h)?;
        let n = f.nrows();
        if !f.is_square() || h.ncols() != n || self.prior_mean.len() != n || self.loss_mask.len() != n {
            return Err(Error::invalid("linear system dimensions disagree"));
        }
        let q = matrix_from_rows(&self.q)?;
        let r = matrix_from_rows(&self.r)?;
        let p = matrix_from_rows(&self.prior_cov)?;
        if q.shape() != (n, n) || p.shape() != (n, n) || r.shape() != (h.nrows(), h.nrows()) {
            return Err(Error::invalid("noise covariance dimensions disagree"));
        }
        if self.steps < 1 {
            return Err(Error::invalid("steps must be positive"));
        }
        Ok(Mats {
            f,
            h,
            q_chol: chol(&q, "Q")?,
            r_chol: chol(&r, "R")?,
            p_chol: chol(&p, "prior covariance")?,
            mean: DVector::from_vec(self.prior_mean.clone()),
        })
    }

    /// The filter model whose prior matches the simulator's initial state.
    pub fn model(&self) -> Result<ModelSpec> {
        let m = self.matrices()?;
        Ok(ModelSpec::linear(
            m.f,
            m.h,
            self.loss_mask.clone(),
            m.mean,
            matrix_from_rows(&self.prior_cov)?,
        ))
    }
}

/// `x_0 ~ N(m, P)`, `x_t = F x_{t-1} + w`, `z_t = H x_t + v`; the first
/// observation is of `x_0`.
pub fn simulate_linear_gaussian(cfg: &LinearGaussianConfig) -> Result<Simulated> {
    let m = cfg.matrices()?;
    let n = m.f.nrows();
    let dz = m.h.nrows();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (trajectories, resampled) = generate(cfg.n_trajectories, cfg.first_stream, cfg.seed, |rng, i| {
        let mut g = |d: usize| DVector::from_fn(d, |_, _| normal.sample(rng));
        let mut x = &m.mean + &m.p_chol * g(n);
        let mut states = Vec::with_capacity(cfg.steps);
        let mut obs = Vec::with_capacity(cfg.steps);
        for t in 0..cfg.steps {
            if t > 0 {
                x = &m.f * x + &m.q_chol * g(n);
            }
            obs.push(&m.h * &x + &m.r_chol * g(dz));
            states.push(x.clone());
        }
        Ok((
            SupervisedTrajectory::new(format!("linear-{}", cfg.first_stream + i as u64), states, obs)?,
            0,
        ))
    })?;
    let truth = NoiseTruth {
        q: Some(matrix_from_rows(&cfg.q)?),
        r_cartesian: Some(matrix_from_rows(&cfg.r)?),
        r_polar: None,
    };
    finish(n, dz, trajectories, resampled, truth, "linear", serde_json::to_value(cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise_est::estimate_noise;

    #[test]
    fn residual_estimate_recovers_the_truth() {
        let cfg = LinearGaussianConfig {
            n_trajectories: 800,
            ..Default::default()
        };
        let s = simulate_linear_gaussian(&cfg).unwrap();
        let (q, r) = estimate_noise(&s.dataset.trajectories, &cfg.model().unwrap()).unwrap();
        let tq = s.truth.q.unwrap();
        let tr = s.truth.r_cartesian.unwrap();
        assert!((q - &tq).amax() < 0.02, "{tq}");
        assert!((r - &tr).amax() < 0.1);
    }

    #[test]
    fn rejects_indefinite_noise() {
        let cfg = LinearGaussianConfig {
            r: vec![vec![1.0, 2.0], vec![2.0, 1.0]],
            ..Default::default()
        };
        assert!(matches!(simulate_linear_gaussian(&cfg), Err(Error::NotPositiveDefinite(_))));
    }
}
