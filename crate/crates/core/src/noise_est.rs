//! Supervised noise estimation: sample covariances of the motion and
//! observation residuals of the model along the true trajectories.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::SupervisedTrajectory;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, RCoords};
use crate::observation::polar_frame;
use crate::sim::NoiseTruth;
use crate::spd::mirror_lower;

/// Streaming (count, mean, scatter) accumulator with an associative merge.
#[derive(Clone, Debug)]
pub struct CovAccumulator {
    n: usize,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

impl CovAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: DVector::zeros(dim),
            scatter: DMatrix::zeros(dim, dim),
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, v: &DVector<f64>) {
        self.n += 1;
        let delta = v - &self.mean;
        self.mean += &delta / self.n as f64;
        let delta2 = v - &self.mean;
        self.scatter += &delta * delta2.transpose();
    }

    pub fn merge(&mut self, other: &Self) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let n = (self.n + other.n) as f64;
        let delta = &other.mean - &self.mean;
        let w = self.n as f64 * other.n as f64 / n;
        self.scatter += &other.scatter + &delta * delta.transpose() * w;
        self.mean += &delta * (other.n as f64 / n);
        self.n += other.n;
    }

    /// Sample covariance with divisor `n - 1`, exactly symmetric.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        if self.n < 2 {
            return None;
        }
        let mut c = (&self.scatter + self.scatter.transpose()) * (0.5 / (self.n - 1) as f64);
        mirror_lower(&mut c);
        Some(c)
    }
}

/// Residual vectors of one dataset.
#[derive(Clone, Debug, Default)]
pub struct ResidualSet {
    pub q_residuals: Vec<DVector<f64>>,
    pub r_residuals: Vec<DVector<f64>>,
}

fn check_finite(v: &DVector<f64>, trajectory: usize, step: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::CorruptData {
            trajectory,
            step,
            reason: "non-finite residual".into(),
        })
    }
}

/// Observation residual `z - h(x)`, expressed in the model's noise frame.
fn observation_residual(
    model: &ModelSpec,
    x: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    let res = z - model.observation.observe(x)?;
    match model.r_coords {
        RCoords::Cartesian => Ok(res),
        RCoords::Polar => {
            let j = polar_frame(z, model.location_dim)?;
            j.lu()
                .solve(&res)
                .ok_or_else(|| Error::DegenerateGeometry("singular polar frame".into()))
        }
    }
}

fn trajectory_residuals(
    model: &ModelSpec,
    tr: &SupervisedTrajectory,
    k: usize,
    mut on_q: impl FnMut(DVector<f64>),
    mut on_r: impl FnMut(DVector<f64>),
) -> Result<()> {
    for t in 0..tr.len() {
        if t + 1 < tr.len() {
            let f = model.transition.at(t + 1);
            let res = &tr.states[t + 1] - f.as_ref() * &tr.states[t];
            check_finite(&res, k, t)?;
            on_q(res);
        }
        let res = observation_residual(model, &tr.states[t], &tr.observations[t]).map_err(|e| {
            match e {
                Error::DegenerateGeometry(_) | Error::InvalidArgument(_) => e.at(k, t),
                other => other,
            }
        })?;
        check_finite(&res, k, t)?;
        on_r(res);
    }
    Ok(())
}

fn check_dims(model: &ModelSpec, data: &[SupervisedTrajectory]) -> Result<()> {
    for (k, tr) in data.iter().enumerate() {
        if tr.states.first().map(|x| x.len()) != Some(model.state_dim())
            || tr.observations.first().map(|z| z.len()) != Some(model.obs_dim())
        {
            return Err(Error::invalid(format!(
                "trajectory {k} does not match the model dimensions"
            )));
        }
    }
    Ok(())
}

/// Collects all residuals.
pub fn residuals(data: &[SupervisedTrajectory], model: &ModelSpec) -> Result<ResidualSet> {
    check_dims(model, data)?;
    let mut set = ResidualSet::default();
    for (k, tr) in data.iter().enumerate() {
        let mut q = Vec::new();
        let mut r = Vec::new();
        trajectory_residuals(model, tr, k, |v| q.push(v), |v| r.push(v))?;
        set.q_residuals.extend(q);
        set.r_residuals.extend(r);
    }
    Ok(set)
}

/// Sample covariances `(Q̂, R̂)` of the motion and observation residuals.
///
/// For state-dependent observation maps the residual uses `h` at the true
/// state; in polar coordinates each residual is mapped into the sensor frame
/// of its observation first.
pub fn estimate_noise(
    data: &[SupervisedTrajectory],
    model: &ModelSpec,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_dims(model, data)?;
    let dx = model.state_dim();
    let dz = model.obs_dim();
    let partials: Vec<(CovAccumulator, CovAccumulator)> = data
        .par_iter()
        .enumerate()
        .map(|(k, tr)| {
            let mut q = CovAccumulator::new(dx);
            let mut r = CovAccumulator::new(dz);
            trajectory_residuals(model, tr, k, |v| q.push(&v), |v| r.push(&v))?;
            Ok((q, r))
        })
        .collect::<Result<_>>()?;
    let mut q = CovAccumulator::new(dx);
    let mut r = CovAccumulator::new(dz);
    for (pq, pr) in &partials {
        q.merge(pq);
        r.merge(pr);
    }
    let q_hat = q.covariance().ok_or_else(|| {
        Error::InsufficientData(format!("{} motion residuals, need at least 2", q.count()))
    })?;
    let r_hat = r.covariance().ok_or_else(|| {
        Error::InsufficientData(format!("{} observation residuals, need at least 2", r.count()))
    })?;
    Ok((q_hat, r_hat))
}

/// Noise parameters of a filter that knows the simulator's true observation
/// noise. The motion noise is the simulator's when it is known and
/// estimated from `data` otherwise.
pub fn build_oracle_params(
    truth: &NoiseTruth,
    model: &ModelSpec,
    data: &[SupervisedTrajectory],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let r = match model.r_coords {
        RCoords::Cartesian => truth.r_cartesian.as_ref(),
        RCoords::Polar => truth.r_polar.as_ref(),
    }
    .ok_or_else(|| {
        Error::invalid(format!(
            "simulator truth has no observation noise in {:?} coordinates",
            model.r_coords
        ))
    })?;
    if r.nrows() != model.obs_dim() {
        return Err(Error::invalid("truth observation noise has the wrong size"));
    }
    let q = match &truth.q {
        Some(q) => q.clone(),
        None => estimate_noise(data, model)?.0,
    };
    Ok((q, r.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn accumulator_merge_matches_single_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = Normal::new(0.0, 2.0).unwrap();
        let vs: Vec<DVector<f64>> = (0..100)
            .map(|_| DVector::from_fn(3, |_, _| n.sample(&mut rng)))
            .collect();
        let mut all = CovAccumulator::new(3);
        vs.iter().for_each(|v| all.push(v));
        let mut a = CovAccumulator::new(3);
        let mut b = CovAccumulator::new(3);
        vs[..37].iter().for_each(|v| a.push(v));
        vs[37..].iter().for_each(|v| b.push(v));
        a.merge(&b);
        assert_relative_eq!(a.covariance().unwrap(), all.covariance().unwrap(), epsilon = 1e-12);

        // Two-pass reference.
        let mean = vs.iter().fold(DVector::zeros(3), |acc, v| acc + v) / 100.0;
        let cov = vs
            .iter()
            .fold(DMatrix::zeros(3, 3), |acc, v| acc + (v - &mean) * (v - &mean).transpose())
            / 99.0;
        assert_relative_eq!(all.covariance().unwrap(), cov, epsilon = 1e-12);
    }

    fn noiseless_cv(k: usize) -> SupervisedTrajectory {
        let model = ModelSpec::lidar();
        let f = model.transition.at(1).into_owned();
        let mut x = DVector::from_vec(vec![k as f64 + 3.0, 1.0, 0.5, -0.25]);
        let mut xs = Vec::new();
        let mut zs = Vec::new();
        for _ in 0..6 {
            zs.push(DVector::from_vec(vec![x[0], x[1]]));
            xs.push(x.clone());
            x = &f * x;
        }
        SupervisedTrajectory::new(format!("t{k}"), xs, zs).unwrap()
    }

    #[test]
    fn noiseless_linear_data_gives_zero() {
        let data: Vec<_> = (0..3).map(noiseless_cv).collect();
        let (q, r) = estimate_noise(&data, &ModelSpec::lidar()).unwrap();
        assert!(q.amax() < 1e-24);
        assert!(r.amax() < 1e-24);
    }

    #[test]
    fn too_few_residuals() {
        let tr = SupervisedTrajectory::new(
            "one",
            vec![DVector::zeros(4)],
            vec![DVector::from_vec(vec![1.0, 1.0])],
        )
        .unwrap();
        assert!(matches!(
            estimate_noise(&[tr], &ModelSpec::lidar()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = Normal::new(0.0, 1.0).unwrap();
        let data: Vec<SupervisedTrajectory> = (0..20)
            .map(|k| {
                let len = 3 + k % 5;
                SupervisedTrajectory::new(
                    format!("{k}"),
                    (0..len).map(|_| DVector::from_fn(4, |_, _| n.sample(&mut rng))).collect(),
                    (0..len).map(|_| DVector::from_fn(2, |_, _| n.sample(&mut rng))).collect(),
                )
                .unwrap()
            })
            .collect();
        let model = ModelSpec::lidar();
        let (q1, r1) = estimate_noise(&data, &model).unwrap();
        let mut rev = data.clone();
        rev.reverse();
        let (q2, r2) = estimate_noise(&rev, &model).unwrap();
        assert_relative_eq!(q1, q2, epsilon = 1e-12);
        assert_relative_eq!(r1, r2, epsilon = 1e-12);
        assert_eq!(q1, q1.transpose());
    }

    #[test]
    fn residual_counts() {
        let data: Vec<_> = (0..3).map(noiseless_cv).collect();
        let set = residuals(&data, &ModelSpec::lidar()).unwrap();
        assert_eq!(set.q_residuals.len(), 3 * 5);
        assert_eq!(set.r_residuals.len(), 3 * 6);
    }
}
