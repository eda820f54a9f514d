//! Kalman filter recursion: prediction, update and full-trajectory rollout.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::model::{HEvalPolicy, InitMode, ModelSpec, Objective, RCoords, VelocityInit};
use crate::observation::{polar_frame, ObservationMap};
use crate::spd::mirror_lower;

/// Filter belief at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() || cov.nrows() != mean.len() {
            return Err(Error::invalid("state mean and covariance dimensions disagree"));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check_finite(&self) -> Result<()> {
        if self.mean.iter().chain(self.cov.iter()).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NumericFailure("non-finite filter state".into()))
        }
    }
}

/// Exact symmetrization: `(P + Pᵀ)/2` with the lower triangle mirrored up.
pub(crate) fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = (p + p.transpose()) * 0.5;
    mirror_lower(&mut s);
    s
}

/// Prediction step: `x' = F x`, `P' = F P Fᵀ + Q`.
pub fn kf_predict(state: &GaussianState, f: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<GaussianState> {
    let n = state.dim();
    if f.nrows() != n || f.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::invalid(format!(
            "predict: state {n}, F {}x{}, Q {}x{}",
            f.nrows(),
            f.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let out = GaussianState {
        mean: f * &state.mean,
        cov: symmetrize(&(f * &state.cov * f.transpose() + q)),
    };
    out.check_finite()?;
    Ok(out)
}

/// Quantities of one update step, kept for the adjoint pass.
#[derive(Clone, Debug)]
pub(crate) struct UpdateParts {
    pub h: DMatrix<f64>,
    pub innovation: DVector<f64>,
    pub s_chol: Cholesky<f64, Dyn>,
    /// `P Hᵀ`
    pub a: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub posterior: GaussianState,
}

pub(crate) fn update_with_innovation(
    prior: &GaussianState,
    innovation: DVector<f64>,
    h: DMatrix<f64>,
    r: &DMatrix<f64>,
    joseph: bool,
) -> Result<UpdateParts> {
    let n = prior.dim();
    let m = innovation.len();
    if h.nrows() != m || h.ncols() != n || r.nrows() != m || r.ncols() != m {
        return Err(Error::invalid(format!(
            "update: state {n}, observation {m}, H {}x{}, R {}x{}",
            h.nrows(),
            h.ncols(),
            r.nrows(),
            r.ncols()
        )));
    }
    let a = &prior.cov * h.transpose();
    let s = symmetrize(&(&h * &a + r));
    let s_chol = s.cholesky().ok_or(Error::SingularInnovation)?;
    // K = A S⁻¹, via Kᵀ = S⁻¹ Aᵀ.
    let gain = s_chol.solve(&a.transpose()).transpose();
    let mean = &prior.mean + &gain * &innovation;
    let cov = if joseph {
        let ikh = DMatrix::identity(n, n) - &gain * &h;
        &ikh * &prior.cov * ikh.transpose() + &gain * r * gain.transpose()
    } else {
        (DMatrix::identity(n, n) - &gain * &h) * &prior.cov
    };
    let posterior = GaussianState {
        mean,
        cov: symmetrize(&cov),
    };
    if posterior.mean.iter().chain(posterior.cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure("non-finite posterior".into()));
    }
    Ok(UpdateParts {
        h,
        innovation,
        s_chol,
        a,
        gain,
        posterior,
    })
}

/// Update step with a linear observation model.
pub fn kf_update(
    state: &GaussianState,
    z: &DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<GaussianState> {
    if h.ncols() != state.dim() || h.nrows() != z.len() {
        return Err(Error::invalid("update: H does not match state and observation"));
    }
    let innovation = z - h * &state.mean;
    Ok(update_with_innovation(state, innovation, h.clone(), r, false)?.posterior)
}

/// Evaluates the observation matrix used by an update.
///
/// `AtObservation` reads the geometry from `point` as an observation,
/// `AtEstimate` treats `point` as a state and returns `∇h`, `Exact` returns
/// the constant matrix.
pub fn eval_observation_map(
    map: &ObservationMap,
    policy: HEvalPolicy,
    point: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    match policy {
        HEvalPolicy::AtObservation => map.matrix_at(point),
        HEvalPolicy::AtEstimate => map.jacobian(point),
        HEvalPolicy::Exact => match map {
            ObservationMap::Constant(h) => Ok(h.clone()),
            _ => Err(Error::invalid("exact policy needs a constant observation matrix")),
        },
    }
}

/// Prior belief for the first step.
pub fn initial_state(model: &ModelSpec, first_obs: &DVector<f64>) -> Result<GaussianState> {
    let dx = model.state_dim();
    match &model.init.mode {
        InitMode::Fixed { mean, cov } => GaussianState::new(
            DVector::from_column_slice(mean),
            DMatrix::from_column_slice(dx, dx, cov),
        ),
        InitMode::FromFirstObservation => {
            let mut mean = DVector::zeros(dx);
            for i in 0..model.init_block {
                mean[i] = first_obs[i];
            }
            if model.init.velocity_init == VelocityInit::FromDoppler {
                if !matches!(model.observation, ObservationMap::Doppler) {
                    return Err(Error::invalid("Doppler velocity init needs the Doppler observation"));
                }
                let h = model.observation.matrix_at(first_obs)?;
                for i in 0..3 {
                    mean[3 + i] = first_obs[3] * h[(3, 3 + i)];
                }
            }
            Ok(GaussianState {
                mean,
                cov: DMatrix::identity(dx, dx) * model.init.p0_scale,
            })
        }
    }
}

/// Everything computed at one time step.
#[derive(Clone, Debug)]
pub(crate) struct StepRecord {
    /// Whether a prediction preceded this update (false at the first step).
    pub predicted: bool,
    pub prior: GaussianState,
    /// Cartesian-to-sensor frame map applied to `R̂` (polar coordinates only).
    pub frame: Option<DMatrix<f64>>,
    pub update: UpdateParts,
}

impl StepRecord {
    pub fn output(&self, objective: Objective) -> &GaussianState {
        match objective {
            Objective::FilterCurrent => &self.update.posterior,
            Objective::PredictNext => &self.prior,
        }
    }
}

/// Observation noise covariance in Cartesian coordinates at `z`.
pub(crate) fn effective_r(
    model: &ModelSpec,
    r: &DMatrix<f64>,
    z: &DVector<f64>,
) -> Result<(DMatrix<f64>, Option<DMatrix<f64>>)> {
    match model.r_coords {
        RCoords::Cartesian => Ok((r.clone(), None)),
        RCoords::Polar => {
            let j = polar_frame(z, model.location_dim)?;
            let rt = symmetrize(&(&j * r * j.transpose()));
            Ok((rt, Some(j)))
        }
    }
}

fn filter_step(
    model: &ModelSpec,
    prior: GaussianState,
    predicted: bool,
    z: &DVector<f64>,
    r: &DMatrix<f64>,
) -> Result<StepRecord> {
    let (h, predicted_obs) = match model.h_policy {
        HEvalPolicy::AtEstimate => (
            model.observation.jacobian(&prior.mean)?,
            model.observation.observe(&prior.mean)?,
        ),
        policy => {
            let h = eval_observation_map(&model.observation, policy, z)?;
            let y = &h * &prior.mean;
            (h, y)
        }
    };
    let (rt, frame) = effective_r(model, r, z)?;
    let update = update_with_innovation(&prior, z - predicted_obs, h, &rt, model.joseph)?;
    Ok(StepRecord {
        predicted,
        prior,
        frame,
        update,
    })
}

/// Runs the recursion over one observation sequence and keeps every step.
pub(crate) fn rollout(
    model: &ModelSpec,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    observations: &[DVector<f64>],
) -> Result<Vec<StepRecord>> {
    let first = observations
        .first()
        .ok_or_else(|| Error::invalid("empty observation sequence"))?;
    let dz = model.obs_dim();
    if let Some(t) = observations.iter().position(|z| z.len() != dz) {
        return Err(Error::invalid(format!("observation {t} has wrong length")).at(0, t));
    }
    let mut records: Vec<StepRecord> = Vec::with_capacity(observations.len());
    let mut belief = initial_state(model, first).map_err(|e| e.at(0, 0))?;
    for (t, z) in observations.iter().enumerate() {
        let predicted = t > 0;
        if predicted {
            let f = model.transition.at(t);
            belief = kf_predict(&belief, &f, q).map_err(|e| e.at(0, t))?;
        }
        let rec = filter_step(model, belief, predicted, z, r).map_err(|e| e.at(0, t))?;
        belief = rec.update.posterior.clone();
        records.push(rec);
    }
    Ok(records)
}

/// Filters an observation sequence. Under `FilterCurrent` the post-update
/// belief is reported per step; under `PredictNext` the pre-update one.
pub fn run_filter(
    model: &ModelSpec,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    observations: &[DVector<f64>],
) -> Result<Vec<GaussianState>> {
    Ok(rollout(model, q, r, observations)?
        .into_iter()
        .map(|rec| match model.objective {
            Objective::FilterCurrent => rec.update.posterior,
            Objective::PredictNext => rec.prior,
        })
        .collect())
}
