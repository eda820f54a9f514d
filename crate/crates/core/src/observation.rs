//! Observation maps and their derivatives.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Observations closer to the sensor than this are rejected.
pub const R_MIN: f64 = 1e-6;

/// A differentiable, possibly state-dependent observation model.
///
/// `matrix_at` gives the linear operator used when the map is evaluated at an
/// observation (`H(z)`), while `observe`/`jacobian` define the nonlinear
/// function `h(x)` used by the extended filter.
pub trait ObservationFunction: Debug + Send + Sync {
    fn obs_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    /// `H(point)` where `point` is an observation vector.
    fn matrix_at(&self, point: &DVector<f64>) -> Result<DMatrix<f64>>;
    /// `h(x)`.
    fn observe(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    /// `∇h(x)`, a `d_z x d_x` matrix.
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;
    /// Gradient with respect to `x` of `Σ_ij w_ij ∂h_i/∂x_j(x)`.
    fn jacobian_vjp(&self, x: &DVector<f64>, w: &DMatrix<f64>) -> Result<DVector<f64>>;
}

#[derive(Clone, Debug)]
pub enum ObservationMap {
    /// Constant `d_z x d_x` matrix.
    Constant(DMatrix<f64>),
    /// Radar observation of location plus radial velocity: `d_x = 6`, `d_z = 4`.
    Doppler,
    Custom(Arc<dyn ObservationFunction>),
}

impl ObservationMap {
    pub fn obs_dim(&self) -> usize {
        match self {
            ObservationMap::Constant(h) => h.nrows(),
            ObservationMap::Doppler => 4,
            ObservationMap::Custom(f) => f.obs_dim(),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            ObservationMap::Constant(h) => h.ncols(),
            ObservationMap::Doppler => 6,
            ObservationMap::Custom(f) => f.state_dim(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, ObservationMap::Constant(_))
    }

    pub(crate) fn matrix_at(&self, point: &DVector<f64>) -> Result<DMatrix<f64>> {
        match self {
            ObservationMap::Constant(h) => Ok(h.clone()),
            ObservationMap::Doppler => doppler_matrix(point.rows(0, 3).iter().copied()),
            ObservationMap::Custom(f) => f.matrix_at(point),
        }
    }

    pub(crate) fn observe(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            ObservationMap::Constant(h) => Ok(h * x),
            ObservationMap::Doppler => {
                let h = doppler_matrix(x.rows(0, 3).iter().copied())?;
                Ok(h * x)
            }
            ObservationMap::Custom(f) => f.observe(x),
        }
    }

    pub(crate) fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        match self {
            ObservationMap::Constant(h) => Ok(h.clone()),
            ObservationMap::Doppler => doppler_jacobian(x),
            ObservationMap::Custom(f) => f.jacobian(x),
        }
    }

    pub(crate) fn jacobian_vjp(&self, x: &DVector<f64>, w: &DMatrix<f64>) -> Result<DVector<f64>> {
        match self {
            ObservationMap::Constant(h) => Ok(DVector::zeros(h.ncols())),
            ObservationMap::Doppler => doppler_jacobian_vjp(x, w),
            ObservationMap::Custom(f) => f.jacobian_vjp(x, w),
        }
    }
}

fn unit_and_range(loc: impl Iterator<Item = f64>) -> Result<([f64; 3], f64)> {
    let mut p = [0.0; 3];
    for (slot, v) in p.iter_mut().zip(loc) {
        *slot = v;
    }
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    if !(r > R_MIN) {
        return Err(Error::DegenerateGeometry(format!(
            "range {r:e} is within {R_MIN:e} of the sensor"
        )));
    }
    Ok(([p[0] / r, p[1] / r, p[2] / r], r))
}

/// The Doppler observation matrix with the radial direction read from `loc`.
pub fn doppler_matrix(loc: impl Iterator<Item = f64>) -> Result<DMatrix<f64>> {
    let (u, _) = unit_and_range(loc)?;
    let mut h = DMatrix::zeros(4, 6);
    for i in 0..3 {
        h[(i, i)] = 1.0;
        h[(3, 3 + i)] = u[i];
    }
    Ok(h)
}

/// Jacobian of `h(x) = H(x) x` for the Doppler map.
fn doppler_jacobian(x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let (u, r) = unit_and_range(x.rows(0, 3).iter().copied())?;
    let v = [x[3], x[4], x[5]];
    let uv = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    let mut j = DMatrix::zeros(4, 6);
    for i in 0..3 {
        j[(i, i)] = 1.0;
        j[(3, i)] = (v[i] - uv * u[i]) / r;
        j[(3, 3 + i)] = u[i];
    }
    Ok(j)
}

/// Contracts the Hessian of the radial-velocity component with the last row
/// of `w`. The location rows of `h` are linear and contribute nothing.
fn doppler_jacobian_vjp(x: &DVector<f64>, w: &DMatrix<f64>) -> Result<DVector<f64>> {
    let (u, r) = unit_and_range(x.rows(0, 3).iter().copied())?;
    let v = [x[3], x[4], x[5]];
    let uv = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    let wp = [w[(3, 0)], w[(3, 1)], w[(3, 2)]];
    let wv = [w[(3, 3)], w[(3, 4)], w[(3, 5)]];
    let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let u_wp = dot(&u, &wp);
    let v_wp = dot(&v, &wp);
    let u_wv = dot(&u, &wv);
    let r2 = r * r;
    let mut g = DVector::zeros(6);
    for k in 0..3 {
        // Hpp = (-v uᵀ - u vᵀ - (u·v) I + 3 (u·v) u uᵀ) / r²
        let hpp_w = (-v[k] * u_wp - u[k] * v_wp - uv * wp[k] + 3.0 * uv * u[k] * u_wp) / r2;
        // Hpv = (I - u uᵀ) / r, applied from both sides.
        let hpv_wv = (wv[k] - u[k] * u_wv) / r;
        let hvp_wp = (wp[k] - u[k] * u_wp) / r;
        g[k] = hpp_w + hpv_wv;
        g[3 + k] = hvp_wp;
    }
    Ok(g)
}

/// Tangent map from polar/spherical sensor coordinates to Cartesian at
/// `location` (2-D: range, bearing; 3-D: range, azimuth, elevation).
/// Angular columns carry the range factor, so at unit range (and zero
/// elevation in 3-D) the map is a pure rotation.
pub fn polar_jacobian(location: &[f64]) -> Result<DMatrix<f64>> {
    match location.len() {
        2 => {
            let r = location[0].hypot(location[1]);
            if !(r > R_MIN) {
                return Err(Error::DegenerateGeometry(format!("range {r:e} too small")));
            }
            let (c, s) = (location[0] / r, location[1] / r);
            Ok(DMatrix::from_row_slice(2, 2, &[c, -r * s, s, r * c]))
        }
        3 => {
            let rho = location[0].hypot(location[1]);
            let r = rho.hypot(location[2]);
            if !(r > R_MIN) || !(rho > R_MIN) {
                return Err(Error::DegenerateGeometry(format!(
                    "location {location:?} has undefined azimuth"
                )));
            }
            let (ca, sa) = (location[0] / rho, location[1] / rho);
            let (ce, se) = (rho / r, location[2] / r);
            Ok(DMatrix::from_row_slice(
                3,
                3,
                &[
                    ce * ca,
                    -r * ce * sa,
                    -r * se * ca,
                    ce * sa,
                    r * ce * ca,
                    -r * se * sa,
                    se,
                    0.0,
                    r * ce,
                ],
            ))
        }
        n => Err(Error::invalid(format!(
            "polar frame needs a 2-D or 3-D location, got {n}"
        ))),
    }
}

/// Full `d_z x d_z` frame map: polar Jacobian on the leading location block,
/// identity elsewhere.
pub fn polar_frame(obs: &DVector<f64>, location_dim: usize) -> Result<DMatrix<f64>> {
    let d = obs.len();
    if location_dim > d {
        return Err(Error::invalid("location block exceeds observation size"));
    }
    let loc: Vec<f64> = obs.rows(0, location_dim).iter().copied().collect();
    let j = polar_jacobian(&loc)?;
    let mut full = DMatrix::identity(d, d);
    full.view_mut((0, 0), (location_dim, location_dim)).copy_from(&j);
    Ok(full)
}

/// Transforms a covariance expressed in polar/spherical sensor coordinates
/// into Cartesian coordinates at `location`.
pub fn rotate_r_polar(r_polar: &DMatrix<f64>, location: &[f64]) -> Result<DMatrix<f64>> {
    let d = r_polar.nrows();
    if !r_polar.is_square() || d < location.len() {
        return Err(Error::invalid("polar covariance does not cover the location block"));
    }
    if location.iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateGeometry("zero direction".into()));
    }
    let obs = DVector::from_iterator(
        d,
        location.iter().copied().chain(std::iter::repeat(0.0)).take(d),
    );
    let j = polar_frame(&obs, location.len())?;
    let mut out = &j * r_polar * j.transpose();
    crate::spd::mirror_lower(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn doppler_row_on_x_axis() {
        let h = doppler_matrix([5.0, 0.0, 0.0].into_iter()).unwrap();
        let row: Vec<f64> = h.row(3).iter().copied().collect();
        assert_eq!(row, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn doppler_rejects_origin() {
        assert!(matches!(
            doppler_matrix([0.0, 0.0, 1e-9].into_iter()),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn doppler_jacobian_matches_finite_differences() {
        let x = DVector::from_vec(vec![300.0, -120.0, 45.0, 20.0, 7.0, -3.0]);
        let map = ObservationMap::Doppler;
        let j = map.jacobian(&x).unwrap();
        let h = 1e-4;
        for k in 0..6 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (map.observe(&xp).unwrap() - map.observe(&xm).unwrap()) / (2.0 * h);
            for i in 0..4 {
                assert_relative_eq!(j[(i, k)], fd[i], epsilon = 1e-8, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn doppler_hessian_contraction_matches_finite_differences() {
        let x = DVector::from_vec(vec![40.0, 25.0, -10.0, 3.0, -8.0, 2.0]);
        let w = DMatrix::from_fn(4, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let map = ObservationMap::Doppler;
        let g = map.jacobian_vjp(&x, &w).unwrap();
        let f = |x: &DVector<f64>| map.jacobian(x).unwrap().component_mul(&w).sum();
        let h = 1e-5;
        for k in 0..6 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert_relative_eq!(g[k], fd, epsilon = 1e-8, max_relative = 1e-5);
        }
    }

    #[test]
    fn polar_rotation_reproduces_radial_only_noise() {
        let r0 = 2.5;
        let rp = DMatrix::from_row_slice(2, 2, &[r0, 0.0, 0.0, 0.0]);
        let a = rotate_r_polar(&rp, &[1.0, 0.0]).unwrap();
        assert_relative_eq!(a, DMatrix::from_row_slice(2, 2, &[r0, 0.0, 0.0, 0.0]), epsilon = 1e-15);
        let b = rotate_r_polar(&rp, &[FRAC_PI_2.cos(), FRAC_PI_2.sin()]).unwrap();
        assert_relative_eq!(b, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, r0]), epsilon = 1e-15);
        // General angle against the closed form r0 [c², cs; cs, s²].
        let th: f64 = 0.7;
        let c = rotate_r_polar(&rp, &[th.cos(), th.sin()]).unwrap();
        let (co, si) = (th.cos(), th.sin());
        let expected = DMatrix::from_row_slice(2, 2, &[r0 * co * co, r0 * co * si, r0 * co * si, r0 * si * si]);
        assert_relative_eq!(c, expected, epsilon = 1e-14);
    }

    #[test]
    fn isotropic_polar_noise_is_rotation_invariant() {
        let s2 = 3.0;
        for th in [0.0f64, 0.3, 1.9, -2.4] {
            let out = rotate_r_polar(&(DMatrix::identity(2, 2) * s2), &[th.cos(), th.sin()]).unwrap();
            assert_relative_eq!(out, DMatrix::identity(2, 2) * s2, epsilon = 1e-14);
        }
        let out3 = rotate_r_polar(&(DMatrix::identity(4, 4) * s2), &[0.6, 0.8, 0.0]).unwrap();
        assert_relative_eq!(out3, DMatrix::identity(4, 4) * s2, epsilon = 1e-12);
        // Off the horizon the azimuth arc shrinks by cos(el).
        let out_el = rotate_r_polar(&(DMatrix::identity(3, 3) * s2), &[0.48, 0.6, 0.64]).unwrap();
        assert_relative_eq!(out_el.trace(), s2 * (2.0 + 0.48f64.powi(2) + 0.6f64.powi(2)), epsilon = 1e-12);
    }

    #[test]
    fn spherical_jacobian_matches_finite_differences() {
        let sph_to_cart = |r: f64, az: f64, el: f64| {
            [r * el.cos() * az.cos(), r * el.cos() * az.sin(), r * el.sin()]
        };
        let (r, az, el) = (1200.0, 0.8, 0.2);
        let loc = sph_to_cart(r, az, el);
        let j = polar_jacobian(&loc).unwrap();
        let h = 1e-6;
        let params = [r, az, el];
        for k in 0..3 {
            let mut p = params;
            let mut m = params;
            p[k] += h;
            m[k] -= h;
            let cp = sph_to_cart(p[0], p[1], p[2]);
            let cm = sph_to_cart(m[0], m[1], m[2]);
            for i in 0..3 {
                assert_relative_eq!(j[(i, k)], (cp[i] - cm[i]) / (2.0 * h), epsilon = 1e-5, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn zero_direction_is_rejected() {
        let rp = DMatrix::identity(2, 2);
        assert!(matches!(rotate_r_polar(&rp, &[0.0, 0.0]), Err(Error::DegenerateGeometry(_))));
    }
}
