//! Reverse-mode derivative of the rollout loss with respect to `Q̂` and `R̂`.
//!
//! The forward pass keeps each step's prior, gain and innovation factor;
//! the backward pass walks the steps in reverse carrying the adjoints of the
//! posterior mean and covariance. The innovation inverse only ever appears
//! through Cholesky solves.

use nalgebra::{DMatrix, DVector};

use crate::data::SupervisedTrajectory;
use crate::error::Result;
use crate::filter::{rollout, StepRecord};
use crate::model::{HEvalPolicy, ModelSpec, Objective};

/// Loss and (optionally) its gradient for one trajectory.
#[derive(Clone, Debug)]
pub(crate) struct TrajectoryPass {
    pub loss: f64,
    pub q_bar: Option<DMatrix<f64>>,
    pub r_bar: Option<DMatrix<f64>>,
}

fn weighted_sq(weights: &[f64], est: &DVector<f64>, truth: &DVector<f64>) -> f64 {
    weights
        .iter()
        .zip(est.iter().zip(truth.iter()))
        .map(|(w, (a, b))| w * (a - b) * (a - b))
        .sum()
}

fn weighted_sq_grad(weights: &[f64], est: &DVector<f64>, truth: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        est.len(),
        weights
            .iter()
            .zip(est.iter().zip(truth.iter()))
            .map(|(w, (a, b))| 2.0 * w * (a - b)),
    )
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `Σ_t Σ_i w_i (x̂_t,i - x_t,i)²` over steps past the warm-up.
pub(crate) fn trajectory_pass(
    model: &ModelSpec,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    tr: &SupervisedTrajectory,
    weights: &[f64],
    want_grad: bool,
) -> Result<TrajectoryPass> {
    let records = rollout(model, q, r, &tr.observations)?;
    let loss = records
        .iter()
        .zip(&tr.states)
        .skip(model.warmup_steps)
        .map(|(rec, x)| weighted_sq(weights, &rec.output(model.objective).mean, x))
        .sum();
    if !want_grad {
        return Ok(TrajectoryPass {
            loss,
            q_bar: None,
            r_bar: None,
        });
    }
    let (q_bar, r_bar) = backward(model, &records, &tr.states, weights)?;
    Ok(TrajectoryPass {
        loss,
        q_bar: Some(q_bar),
        r_bar: Some(r_bar),
    })
}

fn backward(
    model: &ModelSpec,
    records: &[StepRecord],
    states: &[DVector<f64>],
    weights: &[f64],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = model.state_dim();
    let m = model.obs_dim();
    let mut q_bar = DMatrix::zeros(n, n);
    let mut r_bar = DMatrix::zeros(m, m);
    // Adjoints of the posterior leaving step t.
    let mut x_bar = DVector::zeros(n);
    let mut p_bar = DMatrix::zeros(n, n);

    for (t, rec) in records.iter().enumerate().rev() {
        let scored = t >= model.warmup_steps;
        if scored && model.objective == Objective::FilterCurrent {
            x_bar += weighted_sq_grad(weights, &rec.update.posterior.mean, &states[t]);
        }

        let u = &rec.update;
        let pp = &rec.prior.cov;
        let k = &u.gain;
        let a = &u.a;
        let h = &u.h;
        let p_bar_u = sym(p_bar.clone());

        // mean' = mean + K e,  P' = P - K Aᵀ,  K = A S⁻¹,  A = P Hᵀ,  S = H P Hᵀ + R.
        let k_bar = &x_bar * u.innovation.transpose() - &p_bar_u * a;
        let e_bar = k.transpose() * &x_bar;
        let mut a_bar = -(&p_bar_u * k);
        // M = K̄ S⁻¹ through a solve.
        let mk = u.s_chol.solve(&k_bar.transpose()).transpose();
        a_bar += &mk;
        let s_bar = sym(-(k.transpose() * &mk));

        let mut pp_bar = &p_bar_u + h.transpose() * &s_bar * h + &a_bar * h;
        let h_bar = (&s_bar * 2.0) * h * pp + a_bar.transpose() * pp;

        match &rec.frame {
            Some(j) => r_bar += j.transpose() * &s_bar * j,
            None => r_bar += &s_bar,
        }

        // e = z - h(x̂⁻), whose Jacobian is the H used in the update.
        let mut xp_bar = &x_bar - h.transpose() * &e_bar;
        if model.h_policy == HEvalPolicy::AtEstimate {
            // H itself depends on the predicted mean.
            xp_bar += model.observation.jacobian_vjp(&rec.prior.mean, &h_bar)?;
        }
        if scored && model.objective == Objective::PredictNext {
            xp_bar += weighted_sq_grad(weights, &rec.prior.mean, &states[t]);
        }
        pp_bar = sym(pp_bar);

        if !rec.predicted {
            break;
        }
        let f = model.transition.at(t);
        q_bar += &pp_bar;
        x_bar = f.transpose() * xp_bar;
        p_bar = f.transpose() * pp_bar * f.as_ref();
    }
    Ok((q_bar, r_bar))
}
