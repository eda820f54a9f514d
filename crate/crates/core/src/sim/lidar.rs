//! 2-D localization against a landmark at the origin, with observation
//! noise drawn in polar coordinates about the landmark.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_range_f, check_range_u, finish, generate, uniform, uniform_len, NoiseTruth, Simulated};
use crate::data::SupervisedTrajectory;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarSimConfig {
    pub n_trajectories: usize,
    pub length_range: (usize, usize),
    pub segment_range: (usize, usize),
    /// Initial and target speeds, units/step.
    pub speed_range: (f64, f64),
    /// Magnitudes of speed changes, units/step².
    pub accel_range: (f64, f64),
    pub turn_radius_range: (f64, f64),
    pub start_radius_range: (f64, f64),
    pub radial_noise_std: f64,
    pub tangential_noise_std: f64,
    /// Trajectories coming closer than this to the landmark are redrawn.
    pub r_min: f64,
    pub seed: u64,
    pub first_stream: u64,
}

impl Default for LidarSimConfig {
    fn default() -> Self {
        Self {
            n_trajectories: 1400,
            length_range: (40, 80),
            segment_range: (10, 30),
            speed_range: (0.5, 2.0),
            accel_range: (0.05, 0.2),
            turn_radius_range: (5.0, 30.0),
            start_radius_range: (5.0, 40.0),
            radial_noise_std: 2.0,
            tangential_noise_std: 0.0,
            r_min: 1.0,
            seed: 0,
            first_stream: 0,
        }
    }
}

impl LidarSimConfig {
    pub fn validate(&self) -> Result<()> {
        check_range_u("length", self.length_range, 2)?;
        check_range_u("segment", self.segment_range, 1)?;
        check_range_f("speed", self.speed_range, f64::MIN_POSITIVE)?;
        check_range_f("acceleration", self.accel_range, 0.0)?;
        check_range_f("turn radius", self.turn_radius_range, f64::MIN_POSITIVE)?;
        check_range_f("start radius", self.start_radius_range, f64::MIN_POSITIVE)?;
        if !(self.radial_noise_std >= 0.0 && self.tangential_noise_std >= 0.0 && self.r_min > 0.0) {
            return Err(Error::invalid("noise stds must be >= 0 and r_min > 0"));
        }
        if self.start_radius_range.0 <= self.r_min {
            return Err(Error::invalid("start radius must exceed r_min"));
        }
        Ok(())
    }
}

/// Noise `n_r` along the landmark direction plus `n_t` across it.
fn polar_noise(rng: &mut impl Rng, p: &Vector2<f64>, radial: f64, tangential: f64) -> Vector2<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let u = p / p.norm();
    let perp = Vector2::new(-u.y, u.x);
    u * (radial * n.sample(rng)) + perp * (tangential * n.sample(rng))
}

enum Segment {
    Straight,
    Speed { target: f64, accel: f64 },
    Turn { omega: f64 },
}

fn lidar_trajectory(cfg: &LidarSimConfig, rng: &mut impl Rng, id: String) -> Option<SupervisedTrajectory> {
    let len = uniform_len(rng, cfg.length_range);
    let phi = rng.random_range(0.0..2.0 * PI);
    let mut p = Vector2::new(phi.cos(), phi.sin()) * uniform(rng, cfg.start_radius_range);
    let heading = rng.random_range(0.0..2.0 * PI);
    let mut v = Vector2::new(heading.cos(), heading.sin()) * uniform(rng, cfg.speed_range);
    let mut segment = Segment::Straight;
    let mut seg_left = 0usize;
    let mut states = Vec::with_capacity(len);
    let mut obs = Vec::with_capacity(len);
    for t in 0..len {
        if p.norm() < cfg.r_min {
            return None;
        }
        states.push(DVector::from_vec(vec![p.x, p.y, v.x, v.y]));
        let z = p + polar_noise(rng, &p, cfg.radial_noise_std, cfg.tangential_noise_std);
        obs.push(DVector::from_vec(vec![z.x, z.y]));
        if t + 1 == len {
            break;
        }
        let v_prev = v;
        if seg_left == 0 {
            seg_left = uniform_len(rng, cfg.segment_range);
            segment = match rng.random_range(0..3) {
                0 => Segment::Straight,
                1 => Segment::Speed {
                    target: uniform(rng, cfg.speed_range),
                    accel: uniform(rng, cfg.accel_range),
                },
                _ => {
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    Segment::Turn {
                        omega: sign / uniform(rng, cfg.turn_radius_range),
                    }
                }
            };
        }
        seg_left -= 1;
        match segment {
            Segment::Straight => {}
            Segment::Speed { target, accel } => {
                let s = v.norm();
                v *= (s + (target - s).clamp(-accel, accel)) / s;
            }
            Segment::Turn { omega } => {
                // Angular rate of a circle of the drawn radius at this speed.
                let a = omega * v.norm();
                let (sn, cs) = a.sin_cos();
                v = Vector2::new(cs * v.x - sn * v.y, sn * v.x + cs * v.y);
            }
        }
        p += (v_prev + v) * 0.5;
    }
    SupervisedTrajectory::new(id, states, obs).ok()
}

/// Simulates the driving problem. Trajectories approaching the landmark
/// closer than `r_min` are redrawn and counted.
pub fn simulate_lidar(cfg: &LidarSimConfig) -> Result<Simulated> {
    cfg.validate()?;
    let (trajectories, resampled) = generate(cfg.n_trajectories, cfg.first_stream, cfg.seed, |rng, i| {
        for attempt in 0..10_000 {
            if let Some(t) = lidar_trajectory(cfg, rng, format!("lidar-{}", cfg.first_stream + i as u64)) {
                return Ok((t, attempt));
            }
        }
        Err(Error::invalid("could not draw a trajectory avoiding the landmark"))
    })?;
    let truth = NoiseTruth {
        q: None,
        r_cartesian: None,
        r_polar: Some(DMatrix::from_diagonal(&DVector::from_vec(vec![
            cfg.radial_noise_std.powi(2),
            cfg.tangential_noise_std.powi(2),
        ]))),
    };
    finish(4, 2, trajectories, resampled, truth, "lidar", serde_json::to_value(cfg)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyLidarConfig {
    /// Motion noise variance per axis.
    pub q: f64,
    /// Radial observation noise variance.
    pub r0: f64,
    pub steps: usize,
    pub n_trajectories: usize,
    /// The initial state is `N(0, init_std² I)`.
    pub init_std: f64,
    /// Observations at states closer than this to the origin are redrawn.
    pub r_min: f64,
    pub seed: u64,
    pub first_stream: u64,
}

impl Default for ToyLidarConfig {
    fn default() -> Self {
        Self {
            q: 1.0,
            r0: 1.0,
            steps: 50,
            n_trajectories: 1000,
            init_std: 10.0,
            r_min: 1e-6,
            seed: 0,
            first_stream: 0,
        }
    }
}

impl ToyLidarConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.r0 > 0.0) {
            return Err(Error::invalid("toy lidar needs q > 0 and r0 > 0"));
        }
        if self.steps < 1 || !(self.init_std >= 0.0) || !(self.r_min > 0.0) {
            return Err(Error::invalid("toy lidar needs steps >= 1, init_std >= 0, r_min > 0"));
        }
        Ok(())
    }
}

fn toy_trajectory(cfg: &ToyLidarConfig, rng: &mut impl Rng, id: String) -> Option<SupervisedTrajectory> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x = Vector2::new(n.sample(rng), n.sample(rng)) * cfg.init_std;
    let sq = cfg.q.sqrt();
    let mut states = Vec::with_capacity(cfg.steps);
    let mut obs = Vec::with_capacity(cfg.steps);
    for t in 0..cfg.steps {
        if x.norm() < cfg.r_min {
            return None;
        }
        states.push(DVector::from_vec(vec![x.x, x.y]));
        let z = x + polar_noise(rng, &x, cfg.r0.sqrt(), 0.0);
        obs.push(DVector::from_vec(vec![z.x, z.y]));
        if t + 1 < cfg.steps {
            x += Vector2::new(n.sample(rng), n.sample(rng)) * sq;
        }
    }
    SupervisedTrajectory::new(id, states, obs).ok()
}

/// Static target with isotropic random-walk motion and radial-only
/// observation noise.
pub fn simulate_toy_lidar(cfg: &ToyLidarConfig) -> Result<Simulated> {
    cfg.validate()?;
    let (trajectories, resampled) = generate(cfg.n_trajectories, cfg.first_stream, cfg.seed, |rng, i| {
        for attempt in 0..10_000 {
            if let Some(t) = toy_trajectory(cfg, rng, format!("toy-lidar-{}", cfg.first_stream + i as u64)) {
                return Ok((t, attempt));
            }
        }
        Err(Error::invalid("could not draw a trajectory away from the origin"))
    })?;
    let truth = NoiseTruth {
        q: Some(DMatrix::identity(2, 2) * cfg.q),
        r_cartesian: None,
        r_polar: Some(DMatrix::from_diagonal(&DVector::from_vec(vec![cfg.r0, 0.0]))),
    };
    finish(2, 2, trajectories, resampled, truth, "toy_lidar", serde_json::to_value(cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_observes_exact_locations() {
        let cfg = LidarSimConfig {
            n_trajectories: 20,
            radial_noise_std: 0.0,
            ..Default::default()
        };
        for tr in &simulate_lidar(&cfg).unwrap().dataset.trajectories {
            for (x, z) in tr.states.iter().zip(&tr.observations) {
                assert_eq!(z.as_slice(), &x.as_slice()[..2]);
            }
        }
    }

    #[test]
    fn pooled_noise_is_isotropic_with_half_variance() {
        let cfg = LidarSimConfig {
            n_trajectories: 600,
            ..Default::default()
        };
        let s = simulate_lidar(&cfg).unwrap();
        let (mut sxx, mut syy, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0);
        for tr in &s.dataset.trajectories {
            for (x, z) in tr.states.iter().zip(&tr.observations) {
                let (dx, dy) = (z[0] - x[0], z[1] - x[1]);
                sxx += dx * dx;
                syy += dy * dy;
                sxy += dx * dy;
                n += 1.0;
            }
        }
        let half = cfg.radial_noise_std.powi(2) / 2.0;
        assert!((sxx / n / half - 1.0).abs() < 0.05, "{}", sxx / n);
        assert!((syy / n / half - 1.0).abs() < 0.05, "{}", syy / n);
        assert!((sxy / n).abs() < 0.05 * half);
    }

    #[test]
    fn noise_follows_the_landmark_direction() {
        // At bearing π/4 the radial-only covariance has off-diagonal r0/2.
        let mut rng = super::super::stream_rng(5, 0);
        let p = Vector2::new(10.0, 10.0);
        let m = 20_000;
        let mut sxy = 0.0;
        for _ in 0..m {
            let e = polar_noise(&mut rng, &p, 1.0, 0.0);
            sxy += e.x * e.y;
        }
        assert!((sxy / m as f64 - 0.5).abs() < 0.03);
    }

    #[test]
    fn near_landmark_trajectories_are_redrawn() {
        let cfg = LidarSimConfig {
            n_trajectories: 200,
            start_radius_range: (3.0, 6.0),
            r_min: 2.5,
            ..Default::default()
        };
        let s = simulate_lidar(&cfg).unwrap();
        assert!(s.resampled > 0);
        for tr in &s.dataset.trajectories {
            assert!(tr.states.iter().all(|x| x[0].hypot(x[1]) >= 2.5));
        }
    }

    #[test]
    fn toy_lidar_truth() {
        let s = simulate_toy_lidar(&ToyLidarConfig {
            n_trajectories: 3,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(s.truth.q.unwrap(), DMatrix::identity(2, 2));
        assert_eq!(s.dataset.trajectories[0].len(), 50);
        assert!(simulate_toy_lidar(&ToyLidarConfig {
            q: 0.0,
            ..Default::default()
        })
        .is_err());
    }
}
