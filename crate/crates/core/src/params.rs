//! Learnable noise parameters and their on-disk representation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spd::{
    self, materialize_backward, materialize_diagonal_backward, CholeskyVector,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameterization {
    #[default]
    FullCholesky,
    Diagonal,
}

/// Parameters of one covariance matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamBlock {
    Cholesky(CholeskyVector),
    /// Log standard deviations of a diagonal covariance.
    Diagonal(Vec<f64>),
}

impl ParamBlock {
    pub fn from_matrix(m: &DMatrix<f64>, p: Parameterization, jitter: f64) -> Result<Self> {
        let m = spd::with_jitter(m, jitter);
        match p {
            Parameterization::FullCholesky => Ok(ParamBlock::Cholesky(spd::parameterize(&m)?)),
            Parameterization::Diagonal => Ok(ParamBlock::Diagonal(spd::parameterize_diagonal(&m)?)),
        }
    }

    pub fn identity(dim: usize, p: Parameterization) -> Self {
        match p {
            Parameterization::FullCholesky => ParamBlock::Cholesky(CholeskyVector::zeros(dim)),
            Parameterization::Diagonal => ParamBlock::Diagonal(vec![0.0; dim]),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ParamBlock::Cholesky(c) => c.dim(),
            ParamBlock::Diagonal(d) => d.len(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        match self {
            ParamBlock::Cholesky(c) => c.as_slice(),
            ParamBlock::Diagonal(d) => d,
        }
    }

    pub fn materialize(&self) -> DMatrix<f64> {
        match self {
            ParamBlock::Cholesky(c) => spd::materialize(c).into_inner(),
            ParamBlock::Diagonal(d) => spd::materialize_diagonal(d).into_inner(),
        }
    }

    /// Gradient with respect to the parameters given one with respect to
    /// the materialized matrix.
    pub fn backward(&self, a_bar: &DMatrix<f64>) -> Vec<f64> {
        match self {
            ParamBlock::Cholesky(c) => materialize_backward(c, a_bar),
            ParamBlock::Diagonal(d) => materialize_diagonal_backward(d, a_bar),
        }
    }

    /// Natural units of each parameter, used to precondition optimizers.
    pub(crate) fn scales(&self) -> Vec<f64> {
        match self {
            ParamBlock::Cholesky(c) => spd::row_scales(c),
            ParamBlock::Diagonal(d) => vec![1.0; d.len()],
        }
    }

    fn with_values(&self, values: &[f64]) -> Result<Self> {
        match self {
            ParamBlock::Cholesky(c) => Ok(ParamBlock::Cholesky(CholeskyVector::new(values.to_vec(), c.dim())?)),
            ParamBlock::Diagonal(_) => {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("non-finite diagonal parameter"));
                }
                Ok(ParamBlock::Diagonal(values.to_vec()))
            }
        }
    }

    pub fn parameterization(&self) -> Parameterization {
        match self {
            ParamBlock::Cholesky(_) => Parameterization::FullCholesky,
            ParamBlock::Diagonal(_) => Parameterization::Diagonal,
        }
    }
}

/// The learnable pair `(theta_Q, theta_R)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub q: ParamBlock,
    pub r: ParamBlock,
}

impl NoiseParams {
    /// Parameters reproducing `q` and `r`; singular estimates get jitter.
    pub fn from_matrices(
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        p: Parameterization,
        jitter: f64,
    ) -> Result<Self> {
        Ok(Self {
            q: ParamBlock::from_matrix(q, p, jitter)?,
            r: ParamBlock::from_matrix(r, p, jitter)?,
        })
    }

    pub fn identity(d_x: usize, d_z: usize, p: Parameterization) -> Self {
        Self {
            q: ParamBlock::identity(d_x, p),
            r: ParamBlock::identity(d_z, p),
        }
    }

    pub fn len(&self) -> usize {
        self.q.as_slice().len() + self.r.as_slice().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat(&self) -> Vec<f64> {
        self.q.as_slice().iter().chain(self.r.as_slice()).copied().collect()
    }

    pub fn with_flat(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::invalid("flat parameter vector has the wrong length"));
        }
        let nq = self.q.as_slice().len();
        Ok(Self {
            q: self.q.with_values(&values[..nq])?,
            r: self.r.with_values(&values[nq..])?,
        })
    }

    pub fn materialize(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.q.materialize(), self.r.materialize())
    }
}

pub const PARAMS_SCHEMA_VERSION: u32 = 1;

/// Serialized noise parameters.
///
/// `q_materialized`/`r_materialized` are the matrices a filter should use.
/// For trained parameters they equal the materialized `theta`; for
/// estimated parameters they hold the raw estimate, while `theta` encodes
/// its jittered (strictly positive definite) version.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub schema_version: u32,
    pub d_x: usize,
    pub d_z: usize,
    pub parameterization: Parameterization,
    pub theta_q: Vec<f64>,
    pub theta_r: Vec<f64>,
    pub q_materialized: Vec<Vec<f64>>,
    pub r_materialized: Vec<Vec<f64>>,
    pub model_fingerprint: String,
    /// How the parameters were obtained, e.g. `estimated` or `optimized`.
    pub method: String,
    pub model_variant: String,
    #[serde(default)]
    pub train_config: Option<serde_json::Value>,
    #[serde(default)]
    pub final_losses: Vec<f64>,
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::Schema("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

impl ParamsFile {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &NoiseParams,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        model_fingerprint: String,
        method: impl Into<String>,
        model_variant: impl Into<String>,
        train_config: Option<serde_json::Value>,
        final_losses: Vec<f64>,
    ) -> Self {
        Self {
            schema_version: PARAMS_SCHEMA_VERSION,
            d_x: params.q.dim(),
            d_z: params.r.dim(),
            parameterization: params.q.parameterization(),
            theta_q: params.q.as_slice().to_vec(),
            theta_r: params.r.as_slice().to_vec(),
            q_materialized: matrix_rows(q),
            r_materialized: matrix_rows(r),
            model_fingerprint,
            method: method.into(),
            model_variant: model_variant.into(),
            train_config,
            final_losses,
        }
    }

    pub fn params(&self) -> Result<NoiseParams> {
        let block = |theta: &[f64], d: usize| -> Result<ParamBlock> {
            match self.parameterization {
                Parameterization::FullCholesky => Ok(ParamBlock::Cholesky(CholeskyVector::new(theta.to_vec(), d)?)),
                Parameterization::Diagonal => {
                    if theta.len() != d {
                        return Err(Error::Schema("diagonal theta has the wrong length".into()));
                    }
                    Ok(ParamBlock::Diagonal(theta.to_vec()))
                }
            }
        };
        Ok(NoiseParams {
            q: block(&self.theta_q, self.d_x)?,
            r: block(&self.theta_r, self.d_z)?,
        })
    }

    pub fn matrices(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let q = matrix_from_rows(&self.q_materialized)?;
        let r = matrix_from_rows(&self.r_materialized)?;
        if q.shape() != (self.d_x, self.d_x) || r.shape() != (self.d_z, self.d_z) {
            return Err(Error::Schema("materialized matrices have wrong shapes".into()));
        }
        Ok((q, r))
    }

    pub fn write(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: Self = serde_json::from_str(&text)?;
        if file.schema_version != PARAMS_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported params schema version {}",
                file.schema_version
            )));
        }
        file.params()?;
        file.matrices()?;
        Ok(file)
    }
}
