//! Kalman filtering with noise covariances that are either estimated from
//! supervised residuals or trained by gradient descent on the filtering
//! error.
//!
//! The main entry points are [`estimate_noise`] for the residual estimate,
//! [`train`] for the optimized parameters, [`run_filter`] to apply either,
//! and [`eval::evaluate`] to score them on test data.

// `!(x > 0.0)` is used deliberately so NaN takes the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod eval;
pub mod filter;
pub mod model;
pub mod noise_est;
pub mod observation;
pub mod optim;
pub mod params;
pub mod sim;
pub mod spd;
pub mod train;

mod adjoint;

pub use data::{Dataset, SupervisedTrajectory};
pub use error::{Error, Result};
pub use filter::{kf_predict, kf_update, run_filter, GaussianState};
pub use model::{Baseline, ModelSpec};
pub use noise_est::{build_oracle_params, estimate_noise};
pub use params::{NoiseParams, ParamsFile, Parameterization};
pub use spd::{CholeskyVector, SpdMatrix};
pub use train::{train, TrainConfig, TrainOutcome};
