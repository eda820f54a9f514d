//! 3-D radar targets observed through location and radial velocity.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_range_f, check_range_u, finish, generate, uniform, uniform_len, NoiseTruth, Simulated};
use crate::data::{Dataset, SupervisedTrajectory};
use crate::error::{Error, Result};
use crate::observation::{doppler_matrix, R_MIN};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkFlags {
    pub anisotropic: bool,
    pub polar_noise: bool,
    pub uncentered: bool,
    pub acceleration: bool,
    pub turns: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    Toy,
    Close,
    ConstV,
    ConstA,
    Free,
}

impl Benchmark {
    pub const ALL: [Benchmark; 5] = [
        Benchmark::Toy,
        Benchmark::Close,
        Benchmark::ConstV,
        Benchmark::ConstA,
        Benchmark::Free,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Toy => "toy",
            Benchmark::Close => "close",
            Benchmark::ConstV => "const_v",
            Benchmark::ConstA => "const_a",
            Benchmark::Free => "free",
        }
    }

    pub fn flags(self) -> BenchmarkFlags {
        let f = |a, p, u, acc, t| BenchmarkFlags {
            anisotropic: a,
            polar_noise: p,
            uncentered: u,
            acceleration: acc,
            turns: t,
        };
        match self {
            Benchmark::Toy => f(false, false, false, false, false),
            Benchmark::Close => f(true, true, false, false, false),
            Benchmark::ConstV => f(true, true, true, false, false),
            Benchmark::ConstA => f(true, true, true, true, false),
            Benchmark::Free => f(true, true, true, true, true),
        }
    }
}

impl std::str::FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown benchmark '{s}'")))
    }
}

impl std::fmt::Display for Benchmark {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DopplerSimConfig {
    pub flags: BenchmarkFlags,
    pub n_trajectories: usize,
    pub length_range: (usize, usize),
    /// Initial and target speeds, units/step.
    pub speed_range: (f64, f64),
    /// Acceleration magnitudes of speed-change and turn segments, units/step².
    pub accel_range: (f64, f64),
    pub segment_range: (usize, usize),
    pub pos_noise_std: f64,
    pub doppler_noise_std: f64,
    /// `(range, azimuth, elevation, doppler)` noise for polar noise.
    pub spherical_noise_stds: [f64; 4],
    pub placement_radius_range: (f64, f64),
    /// Start positions of centered targets are uniform in a ball of this radius.
    pub center_radius: f64,
    /// Width of the velocity elevation distribution of anisotropic targets.
    pub elevation_std_deg: f64,
    pub seed: u64,
    pub first_stream: u64,
}

impl Default for DopplerSimConfig {
    fn default() -> Self {
        Self::preset(Benchmark::Free)
    }
}

impl DopplerSimConfig {
    pub fn preset(b: Benchmark) -> Self {
        Self {
            flags: b.flags(),
            n_trajectories: 1500,
            length_range: (40, 100),
            speed_range: (30.0, 120.0),
            accel_range: match b {
                Benchmark::Free => (24.0, 48.0),
                _ => (8.0, 16.0),
            },
            segment_range: (10, 30),
            pos_noise_std: 100.0,
            doppler_noise_std: 5.0,
            spherical_noise_stds: [50.0, 2e-3, 2e-3, 5.0],
            placement_radius_range: (5e3, 5e4),
            center_radius: 500.0,
            elevation_std_deg: 10.0,
            seed: 0,
            first_stream: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_range_u("length", self.length_range, 2)?;
        check_range_u("segment", self.segment_range, 1)?;
        check_range_f("speed", self.speed_range, f64::MIN_POSITIVE)?;
        if self.flags.acceleration || self.flags.turns {
            check_range_f("acceleration", self.accel_range, f64::MIN_POSITIVE)?;
        }
        if self.flags.uncentered {
            check_range_f("placement radius", self.placement_radius_range, f64::MIN_POSITIVE)?;
        } else if !(self.center_radius > 0.0) {
            return Err(Error::invalid("center radius must be positive"));
        }
        let stds = [self.pos_noise_std, self.doppler_noise_std]
            .into_iter()
            .chain(self.spherical_noise_stds);
        for s in stds {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::invalid("noise standard deviations must be finite and >= 0"));
            }
        }
        if !(self.elevation_std_deg > 0.0) {
            return Err(Error::invalid("elevation width must be positive"));
        }
        Ok(())
    }

    pub fn truth(&self) -> NoiseTruth {
        let linear_motion = !self.flags.acceleration && !self.flags.turns;
        let q = linear_motion.then(|| DMatrix::zeros(6, 6));
        if self.flags.polar_noise {
            let s = self.spherical_noise_stds;
            NoiseTruth {
                q,
                r_cartesian: None,
                r_polar: Some(DMatrix::from_diagonal(&DVector::from_iterator(4, s.iter().map(|v| v * v)))),
            }
        } else {
            let p = self.pos_noise_std.powi(2);
            NoiseTruth {
                q,
                r_cartesian: Some(DMatrix::from_diagonal(&DVector::from_vec(vec![
                    p,
                    p,
                    p,
                    self.doppler_noise_std.powi(2),
                ]))),
                r_polar: None,
            }
        }
    }
}

fn uniform_sphere(rng: &mut impl Rng) -> Vector3<f64> {
    let z: f64 = rng.random_range(-1.0..1.0);
    let az: f64 = rng.random_range(0.0..2.0 * PI);
    let s = (1.0 - z * z).sqrt();
    Vector3::new(s * az.cos(), s * az.sin(), z)
}

fn from_angles(az: f64, el: f64) -> Vector3<f64> {
    Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
}

/// Elevation drawn from a normal distribution truncated at three widths.
fn horizontal_direction(rng: &mut impl Rng, std: f64) -> Vector3<f64> {
    let n = Normal::new(0.0, std).expect("positive width");
    let el = loop {
        let e: f64 = n.sample(rng);
        if e.abs() <= 3.0 * std {
            break e;
        }
    };
    from_angles(rng.random_range(0.0..2.0 * PI), el)
}

fn perpendicular_unit(rng: &mut impl Rng, v: &Vector3<f64>) -> Vector3<f64> {
    let vh = v.normalize();
    loop {
        let w = uniform_sphere(rng);
        let p = w - vh * vh.dot(&w);
        let n = p.norm();
        if n > 1e-3 {
            return p / n;
        }
    }
}

/// Rodrigues rotation of `v` about unit `axis`.
fn rotate(v: &Vector3<f64>, axis: &Vector3<f64>, angle: f64) -> Vector3<f64> {
    let (s, c) = angle.sin_cos();
    v * c + axis.cross(v) * s + axis * axis.dot(v) * (1.0 - c)
}

enum Segment {
    Straight,
    Speed { target: f64, accel: f64 },
    Turn { axis: Vector3<f64>, accel: f64, left: f64 },
}

fn new_segment(cfg: &DopplerSimConfig, rng: &mut impl Rng, v: &Vector3<f64>) -> Segment {
    let mut kinds = vec![0u8];
    if cfg.flags.acceleration {
        kinds.push(1);
    }
    if cfg.flags.turns {
        kinds.push(2);
    }
    match kinds[rng.random_range(0..kinds.len())] {
        1 => Segment::Speed {
            target: uniform(rng, cfg.speed_range),
            accel: uniform(rng, cfg.accel_range),
        },
        2 => {
            let axis = if cfg.flags.anisotropic {
                Vector3::z()
            } else {
                perpendicular_unit(rng, v)
            };
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            Segment::Turn {
                axis: axis * sign,
                accel: uniform(rng, cfg.accel_range),
                left: PI,
            }
        }
        _ => Segment::Straight,
    }
}

fn observe(
    cfg: &DopplerSimConfig,
    rng: &mut impl Rng,
    p: &Vector3<f64>,
    v: &Vector3<f64>,
) -> DVector<f64> {
    let r = p.norm();
    let u = p / r;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut g = || -> f64 { std_normal.sample(rng) };
    if cfg.flags.polar_noise {
        let [sr, sa, se, sd] = cfg.spherical_noise_stds;
        let az = p.y.atan2(p.x);
        let el = (p.z / r).clamp(-1.0, 1.0).asin();
        let loc = from_angles(az + sa * g(), el + se * g()) * (r + sr * g());
        DVector::from_vec(vec![loc.x, loc.y, loc.z, u.dot(v) + sd * g()])
    } else {
        let s = cfg.pos_noise_std;
        DVector::from_vec(vec![
            p.x + s * g(),
            p.y + s * g(),
            p.z + s * g(),
            u.dot(v) + cfg.doppler_noise_std * g(),
        ])
    }
}

fn trajectory(cfg: &DopplerSimConfig, rng: &mut impl Rng, id: String) -> Option<SupervisedTrajectory> {
    let len = uniform_len(rng, cfg.length_range);
    let speed = uniform(rng, cfg.speed_range);
    let heading = if cfg.flags.anisotropic {
        horizontal_direction(rng, cfg.elevation_std_deg.to_radians())
    } else {
        uniform_sphere(rng)
    };
    let mut v = heading * speed;
    let mut p = if cfg.flags.uncentered {
        let dir = if cfg.flags.anisotropic {
            from_angles(rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..20f64.to_radians()))
        } else {
            uniform_sphere(rng)
        };
        dir * uniform(rng, cfg.placement_radius_range)
    } else {
        uniform_sphere(rng) * cfg.center_radius * rng.random::<f64>().cbrt()
    };

    let mut states = Vec::with_capacity(len);
    let mut obs = Vec::with_capacity(len);
    let mut segment = Segment::Straight;
    let mut seg_left = 0usize;
    for t in 0..len {
        if !(p.norm() > R_MIN) {
            return None;
        }
        states.push(DVector::from_vec(vec![p.x, p.y, p.z, v.x, v.y, v.z]));
        obs.push(observe(cfg, rng, &p, &v));
        if t + 1 == len {
            break;
        }
        let v_prev = v;
        if seg_left == 0 {
            segment = new_segment(cfg, rng, &v);
            seg_left = uniform_len(rng, cfg.segment_range);
        }
        seg_left -= 1;
        match &mut segment {
            Segment::Straight => {}
            Segment::Speed { target, accel } => {
                let s = v.norm();
                let next = s + (*target - s).clamp(-*accel, *accel);
                v *= next / s;
            }
            Segment::Turn { axis, accel, left } => {
                let omega = (*accel / v.norm()).min(*left);
                if omega > 0.0 {
                    v = rotate(&v, axis, omega);
                    *left -= omega;
                }
            }
        }
        // Trapezoidal step: exact for constant acceleration over the step.
        p += (v_prev + v) * 0.5;
    }
    SupervisedTrajectory::new(id, states, obs).ok()
}

/// Simulates a Doppler benchmark. Trajectories that pass within `R_MIN` of
/// the radar are redrawn.
pub fn simulate_doppler(cfg: &DopplerSimConfig) -> Result<Simulated> {
    cfg.validate()?;
    let (trajectories, resampled) = generate(cfg.n_trajectories, cfg.first_stream, cfg.seed, |rng, i| {
        for attempt in 0..1000 {
            if let Some(t) = trajectory(cfg, rng, format!("doppler-{}", cfg.first_stream + i as u64)) {
                return Ok((t, attempt));
            }
        }
        Err(Error::invalid("could not draw a trajectory away from the radar"))
    })?;
    finish(
        6,
        4,
        trajectories,
        resampled,
        cfg.truth(),
        "doppler",
        serde_json::to_value(cfg)?,
    )
}

/// Monte-Carlo estimate of the effective observation noise `Cov(Z - H(Z) X)`.
#[derive(Clone, Debug)]
pub struct EffectiveNoise {
    pub cov: DMatrix<f64>,
    /// Standard error of each covariance entry, treating samples as i.i.d.
    pub std_err: DMatrix<f64>,
    pub n: usize,
}

pub fn effective_noise_cov(data: &Dataset) -> Result<EffectiveNoise> {
    if data.d_x != 6 || data.d_z != 4 {
        return Err(Error::invalid("effective noise needs Doppler data"));
    }
    let mut res = Vec::new();
    for (k, tr) in data.trajectories.iter().enumerate() {
        for (t, (x, z)) in tr.states.iter().zip(&tr.observations).enumerate() {
            let h = doppler_matrix(z.rows(0, 3).iter().copied()).map_err(|e| e.at(k, t))?;
            res.push(z - h * x);
        }
    }
    let n = res.len();
    if n < 2 {
        return Err(Error::InsufficientData("need at least 2 residuals".into()));
    }
    let mean = res.iter().fold(DVector::zeros(4), |a, r| a + r) / n as f64;
    let centered: Vec<DVector<f64>> = res.iter().map(|r| r - &mean).collect();
    let cov = DMatrix::from_fn(4, 4, |i, j| {
        centered.iter().map(|c| c[i] * c[j]).sum::<f64>() / (n - 1) as f64
    });
    let std_err = DMatrix::from_fn(4, 4, |i, j| {
        let m = cov[(i, j)];
        let var = centered.iter().map(|c| (c[i] * c[j] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    });
    Ok(EffectiveNoise { cov, std_err, n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::doppler_matrix;

    fn sim(b: Benchmark, n: usize) -> Simulated {
        simulate_doppler(&DopplerSimConfig {
            n_trajectories: n,
            ..DopplerSimConfig::preset(b)
        })
        .unwrap()
    }

    #[test]
    fn presets_match_the_benchmark_table() {
        let table = [
            (Benchmark::Toy, [false, false, false, false, false]),
            (Benchmark::Close, [true, true, false, false, false]),
            (Benchmark::ConstV, [true, true, true, false, false]),
            (Benchmark::ConstA, [true, true, true, true, false]),
            (Benchmark::Free, [true, true, true, true, true]),
        ];
        for (b, [a, p, u, acc, t]) in table {
            let f = DopplerSimConfig::preset(b).flags;
            assert_eq!(
                [f.anisotropic, f.polar_noise, f.uncentered, f.acceleration, f.turns],
                [a, p, u, acc, t],
                "{b}"
            );
        }
    }

    #[test]
    fn toy_targets_move_at_constant_velocity() {
        let s = sim(Benchmark::Toy, 50);
        for tr in &s.dataset.trajectories {
            for w in tr.states.windows(2) {
                for i in 0..3 {
                    assert_eq!(w[1][i], w[0][i] + w[0][3 + i]);
                    assert_eq!(w[1][3 + i], w[0][3 + i]);
                }
            }
        }
    }

    #[test]
    fn toy_observation_noise_is_as_configured() {
        let s = simulate_doppler(&DopplerSimConfig {
            n_trajectories: 1500,
            ..DopplerSimConfig::preset(Benchmark::Toy)
        })
        .unwrap();
        let mut n = 0usize;
        let mut sums = [0.0f64; 4];
        for tr in &s.dataset.trajectories {
            for (x, z) in tr.states.iter().zip(&tr.observations) {
                let h = doppler_matrix(x.rows(0, 3).iter().copied()).unwrap();
                let r = z - h * x;
                for i in 0..4 {
                    sums[i] += r[i] * r[i];
                }
                n += 1;
            }
        }
        assert!(n > 100_000);
        let expect = [1e4, 1e4, 1e4, 25.0];
        for i in 0..4 {
            let v = sums[i] / n as f64;
            assert!((v / expect[i] - 1.0).abs() < 0.05, "axis {i}: {v}");
        }
    }

    #[test]
    fn free_targets_turn() {
        let s = sim(Benchmark::Free, 100);
        let turned = s.dataset.trajectories.iter().any(|tr| {
            let v0 = tr.states[0].rows(3, 3).into_owned();
            tr.states.iter().any(|x| {
                let v = x.rows(3, 3);
                (v0.dot(&v) / (v0.norm() * v.norm())).acos() > 30f64.to_radians()
            })
        });
        assert!(turned);
    }

    #[test]
    fn isotropic_directions_are_uniform() {
        use statrs::distribution::{ContinuousCDF, Uniform};
        // sin(elevation) of a uniform direction on the sphere is U(-1, 1).
        let s = sim(Benchmark::Toy, 400);
        let mut zs: Vec<f64> = s
            .dataset
            .trajectories
            .iter()
            .map(|tr| {
                let v = tr.states[0].rows(3, 3);
                v[2] / v.norm()
            })
            .collect();
        zs.sort_by(f64::total_cmp);
        let u = Uniform::new(-1.0, 1.0).unwrap();
        let n = zs.len() as f64;
        let d = zs
            .iter()
            .enumerate()
            .map(|(i, z)| {
                let c = u.cdf(*z);
                (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
            })
            .fold(0.0, f64::max);
        // Asymptotic Kolmogorov-Smirnov critical value at p = 0.01.
        assert!(d < 1.628 / n.sqrt(), "D = {d}");
    }

    #[test]
    fn same_seed_same_data() {
        let a = sim(Benchmark::Free, 5);
        let b = sim(Benchmark::Free, 5);
        assert_eq!(a.dataset, b.dataset);
    }

    #[test]
    fn invalid_configs() {
        let mut c = DopplerSimConfig::preset(Benchmark::ConstV);
        c.placement_radius_range = (0.0, 0.0);
        assert!(matches!(simulate_doppler(&c), Err(Error::InvalidArgument(_))));
        let mut c = DopplerSimConfig::preset(Benchmark::Toy);
        c.length_range = (1, 5);
        assert!(simulate_doppler(&c).is_err());
    }
}
