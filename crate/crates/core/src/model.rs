//! System descriptions consumed by the filter.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::ObservationMap;

/// Where the observation matrix is evaluated at each update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HEvalPolicy {
    /// `H̃ = H(z)`: read the geometry from the current observation.
    AtObservation,
    /// Extended filter: `H̃ = ∇h(x̂)` at the predicted mean.
    AtEstimate,
    /// Constant `H`.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RCoords {
    Cartesian,
    /// `R̂` lives in polar/spherical sensor coordinates and is rotated into
    /// Cartesian coordinates at each observation.
    Polar,
}

/// Which belief the loss and evaluation look at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Post-update estimate of the current state.
    FilterCurrent,
    /// Pre-update prediction, oblivious to the current observation.
    PredictNext,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Copy the leading `init_block` observation entries into the state,
    /// zero elsewhere, covariance `p0_scale * I`.
    FromFirstObservation,
    /// Fixed prior for the first step.
    Fixed { mean: Vec<f64>, cov: Vec<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VelocityInit {
    Zero,
    /// Radial velocity projected along the observed line of sight.
    FromDoppler,
}

/// Prior belief at the first time step. The first update consumes `z_1`
/// without a preceding prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitPolicy {
    pub mode: InitMode,
    pub p0_scale: f64,
    pub velocity_init: VelocityInit,
}

impl Default for InitPolicy {
    fn default() -> Self {
        Self {
            mode: InitMode::FromFirstObservation,
            p0_scale: 1e4,
            velocity_init: VelocityInit::Zero,
        }
    }
}

/// State transition model. Only stationary matrices appear in the shipped
/// scenarios; the hook exists for time-varying systems.
#[derive(Clone)]
pub enum Transition {
    Stationary(DMatrix<f64>),
    TimeVarying(Arc<dyn Fn(usize) -> DMatrix<f64> + Send + Sync>),
}

impl Transition {
    /// Transition from step `t - 1` into step `t`.
    pub fn at(&self, t: usize) -> std::borrow::Cow<'_, DMatrix<f64>> {
        match self {
            Transition::Stationary(f) => std::borrow::Cow::Borrowed(f),
            Transition::TimeVarying(hook) => std::borrow::Cow::Owned(hook(t)),
        }
    }
}

impl fmt::Debug for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transition::Stationary(m) => f.debug_tuple("Stationary").field(m).finish(),
            Transition::TimeVarying(_) => f.write_str("TimeVarying(..)"),
        }
    }
}

/// Filter variants used throughout the benchmark grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    #[default]
    Kf,
    Kfp,
    Ekf,
    Ekfp,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [Baseline::Kf, Baseline::Kfp, Baseline::Ekf, Baseline::Ekfp];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Kf => "kf",
            Baseline::Kfp => "kfp",
            Baseline::Ekf => "ekf",
            Baseline::Ekfp => "ekfp",
        }
    }

    pub fn is_polar(self) -> bool {
        matches!(self, Baseline::Kfp | Baseline::Ekfp)
    }

    pub fn is_extended(self) -> bool {
        matches!(self, Baseline::Ekf | Baseline::Ekfp)
    }
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kf" => Ok(Baseline::Kf),
            "kfp" => Ok(Baseline::Kfp),
            "ekf" => Ok(Baseline::Ekf),
            "ekfp" => Ok(Baseline::Ekfp),
            other => Err(Error::invalid(format!("unknown model variant '{other}'"))),
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub transition: Transition,
    pub observation: ObservationMap,
    pub h_policy: HEvalPolicy,
    pub r_coords: RCoords,
    /// Number of leading observation entries forming a Cartesian location
    /// (used by the polar frame and by Doppler velocity initialization).
    pub location_dim: usize,
    /// Number of leading observation entries copied into the initial state.
    pub init_block: usize,
    pub loss_mask: Vec<bool>,
    pub init: InitPolicy,
    pub objective: Objective,
    /// Leading steps excluded from loss and evaluation.
    pub warmup_steps: usize,
    /// Joseph-form covariance update.
    pub joseph: bool,
}

impl ModelSpec {
    pub fn state_dim(&self) -> usize {
        self.observation.state_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.observation.obs_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let dx = self.state_dim();
        let dz = self.obs_dim();
        if let Transition::Stationary(f) = &self.transition {
            if f.nrows() != dx || f.ncols() != dx {
                return Err(Error::invalid(format!(
                    "transition is {}x{}, expected {dx}x{dx}",
                    f.nrows(),
                    f.ncols()
                )));
            }
        }
        if self.loss_mask.len() != dx {
            return Err(Error::invalid("loss mask length differs from state size"));
        }
        if !self.loss_mask.iter().any(|m| *m) {
            return Err(Error::invalid("loss mask selects no state entries"));
        }
        if self.init.p0_scale <= 0.0 || !self.init.p0_scale.is_finite() {
            return Err(Error::invalid("p0_scale must be positive"));
        }
        if self.init_block > dz.min(dx) {
            return Err(Error::invalid("init block exceeds state or observation size"));
        }
        if self.r_coords == RCoords::Polar && !(2..=3).contains(&self.location_dim) {
            return Err(Error::invalid("polar noise needs a 2-D or 3-D location block"));
        }
        if self.location_dim > dz {
            return Err(Error::invalid("location block exceeds observation size"));
        }
        if self.h_policy == HEvalPolicy::Exact && !self.observation.is_constant() {
            return Err(Error::invalid("exact H policy needs a constant observation matrix"));
        }
        if let InitMode::Fixed { mean, cov } = &self.init.mode {
            if mean.len() != dx || cov.len() != dx * dx {
                return Err(Error::invalid("fixed prior has wrong dimensions"));
            }
        }
        Ok(())
    }

    pub fn mask_indices(&self) -> Vec<usize> {
        self.loss_mask
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.then_some(i))
            .collect()
    }

    pub fn with_objective(mut self, objective: Objective) -> Self {
        self.objective = objective;
        self
    }

    /// Stable textual identity used to tie parameter files to a model.
    pub fn fingerprint(&self) -> String {
        let f = match &self.transition {
            Transition::Stationary(f) => format!("{:?}", f.as_slice()),
            Transition::TimeVarying(_) => "time-varying".into(),
        };
        let h = match &self.observation {
            ObservationMap::Constant(h) => format!("constant{:?}", h.as_slice()),
            ObservationMap::Doppler => "doppler".into(),
            ObservationMap::Custom(c) => format!("custom:{c:?}"),
        };
        let desc = format!(
            "dx={};dz={};F={f};H={h};policy={:?};r={:?};loc={};init_block={};mask={:?};init={:?};objective={:?};warmup={};joseph={}",
            self.state_dim(),
            self.obs_dim(),
            self.h_policy,
            self.r_coords,
            self.location_dim,
            self.init_block,
            self.loss_mask,
            self.init,
            self.objective,
            self.warmup_steps,
            self.joseph
        );
        format!("{:016x}", fnv1a(desc.as_bytes()))
    }

    /// Constant-velocity transition for `dims` spatial axes, with
    /// `extra` static entries between positions and velocities.
    pub fn constant_velocity(dims: usize, extra: usize) -> DMatrix<f64> {
        let n = 2 * dims + extra;
        let mut f = DMatrix::identity(n, n);
        for i in 0..dims {
            f[(i, dims + extra + i)] = 1.0;
        }
        f
    }

    /// 3-D radar tracking with location and radial velocity observations.
    pub fn doppler(baseline: Baseline) -> Self {
        Self {
            transition: Transition::Stationary(Self::constant_velocity(3, 0)),
            observation: ObservationMap::Doppler,
            h_policy: if baseline.is_extended() {
                HEvalPolicy::AtEstimate
            } else {
                HEvalPolicy::AtObservation
            },
            r_coords: if baseline.is_polar() {
                RCoords::Polar
            } else {
                RCoords::Cartesian
            },
            location_dim: 3,
            init_block: 3,
            loss_mask: vec![true, true, true, false, false, false],
            init: InitPolicy::default(),
            objective: Objective::FilterCurrent,
            warmup_steps: 0,
            joseph: false,
        }
    }

    /// 2-D vehicle localization against a landmark at the origin.
    pub fn lidar() -> Self {
        let mut h = DMatrix::zeros(2, 4);
        h[(0, 0)] = 1.0;
        h[(1, 1)] = 1.0;
        Self {
            transition: Transition::Stationary(Self::constant_velocity(2, 0)),
            observation: ObservationMap::Constant(h),
            h_policy: HEvalPolicy::Exact,
            r_coords: RCoords::Cartesian,
            location_dim: 2,
            init_block: 2,
            loss_mask: vec![true, true, false, false],
            init: InitPolicy {
                p0_scale: 1e2,
                ..InitPolicy::default()
            },
            objective: Objective::FilterCurrent,
            warmup_steps: 0,
            joseph: false,
        }
    }

    /// Static 2-D target with identity dynamics and observation.
    pub fn toy_lidar() -> Self {
        Self {
            transition: Transition::Stationary(DMatrix::identity(2, 2)),
            observation: ObservationMap::Constant(DMatrix::identity(2, 2)),
            h_policy: HEvalPolicy::Exact,
            r_coords: RCoords::Cartesian,
            location_dim: 2,
            init_block: 2,
            loss_mask: vec![true, true],
            init: InitPolicy {
                p0_scale: 1e2,
                ..InitPolicy::default()
            },
            objective: Objective::FilterCurrent,
            warmup_steps: 0,
            joseph: false,
        }
    }

    /// Bounding-box tracking: state `(cx, cy, w, h, vx, vy)`, observation
    /// `(cx, cy, w, h)`, next-frame location prediction.
    pub fn video() -> Self {
        let h = DMatrix::from_fn(4, 6, |i, j| if i == j { 1.0 } else { 0.0 });
        Self {
            transition: Transition::Stationary(Self::constant_velocity(2, 2)),
            observation: ObservationMap::Constant(h),
            h_policy: HEvalPolicy::Exact,
            r_coords: RCoords::Cartesian,
            location_dim: 2,
            init_block: 4,
            loss_mask: vec![true, true, false, false, false, false],
            init: InitPolicy {
                p0_scale: 1e2,
                ..InitPolicy::default()
            },
            objective: Objective::PredictNext,
            warmup_steps: 0,
            joseph: false,
        }
    }

    /// Generic linear model with a fixed prior.
    pub fn linear(
        f: DMatrix<f64>,
        h: DMatrix<f64>,
        loss_mask: Vec<bool>,
        prior_mean: DVector<f64>,
        prior_cov: DMatrix<f64>,
    ) -> Self {
        Self {
            transition: Transition::Stationary(f),
            observation: ObservationMap::Constant(h),
            h_policy: HEvalPolicy::Exact,
            r_coords: RCoords::Cartesian,
            location_dim: 0,
            init_block: 0,
            loss_mask,
            init: InitPolicy {
                mode: InitMode::Fixed {
                    mean: prior_mean.as_slice().to_vec(),
                    cov: prior_cov.as_slice().to_vec(),
                },
                p0_scale: 1.0,
                velocity_init: VelocityInit::Zero,
            },
            objective: Objective::FilterCurrent,
            warmup_steps: 0,
            joseph: false,
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
