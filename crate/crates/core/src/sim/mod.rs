//! Seeded simulators for the tracking scenarios.
//!
//! Every trajectory draws from its own ChaCha stream `(seed, stream)`, so
//! output does not depend on thread scheduling and nested subsets of a
//! larger simulation are prefixes of it.

mod doppler;
mod lidar;
mod linear;
mod pedestrian;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{Dataset, SupervisedTrajectory};
use crate::error::{Error, Result};
use crate::model::{Baseline, ModelSpec};
use crate::params::{matrix_from_rows, matrix_rows};

pub use doppler::{effective_noise_cov, simulate_doppler, Benchmark, BenchmarkFlags, DopplerSimConfig, EffectiveNoise};
pub use lidar::{simulate_lidar, simulate_toy_lidar, LidarSimConfig, ToyLidarConfig};
pub use linear::{simulate_linear_gaussian, LinearGaussianConfig};
pub use pedestrian::{simulate_pedestrian, PedestrianConfig};

/// Stream offset of test trajectories, far above any training index.
pub const TEST_STREAM_OFFSET: u64 = 1 << 40;

/// Ground-truth noise of a simulator, as far as it is well defined.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NoiseTruth {
    /// Motion noise; `None` when the motion is not a noisy linear model.
    pub q: Option<DMatrix<f64>>,
    /// Stationary observation noise in Cartesian coordinates.
    pub r_cartesian: Option<DMatrix<f64>>,
    /// Stationary observation noise in polar/spherical sensor coordinates.
    pub r_polar: Option<DMatrix<f64>>,
}

#[derive(Serialize, Deserialize)]
struct NoiseTruthRepr {
    q: Option<Vec<Vec<f64>>>,
    r_cartesian: Option<Vec<Vec<f64>>>,
    r_polar: Option<Vec<Vec<f64>>>,
}

impl NoiseTruth {
    pub fn to_json(&self) -> serde_json::Value {
        let repr = NoiseTruthRepr {
            q: self.q.as_ref().map(matrix_rows),
            r_cartesian: self.r_cartesian.as_ref().map(matrix_rows),
            r_polar: self.r_polar.as_ref().map(matrix_rows),
        };
        serde_json::to_value(repr).expect("plain data serializes")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let repr: NoiseTruthRepr = serde_json::from_value(v.clone())?;
        let conv = |m: Option<Vec<Vec<f64>>>| m.map(|rows| matrix_from_rows(&rows)).transpose();
        Ok(Self {
            q: conv(repr.q)?,
            r_cartesian: conv(repr.r_cartesian)?,
            r_polar: conv(repr.r_polar)?,
        })
    }

    /// Reads the truth block a simulator stored in dataset metadata.
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let v = ds
            .metadata
            .get("truth")
            .ok_or_else(|| Error::Schema("dataset has no ground-truth noise block".into()))?;
        Self::from_json(v)
    }
}

/// Output of one simulator run.
#[derive(Clone, Debug)]
pub struct Simulated {
    pub dataset: Dataset,
    pub truth: NoiseTruth,
    /// Trajectories redrawn because they violated a geometric constraint.
    pub resampled: usize,
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn uniform(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..range.1)
    }
}

pub(crate) fn uniform_len(rng: &mut impl Rng, range: (usize, usize)) -> usize {
    rng.random_range(range.0..=range.1)
}

pub(crate) fn check_range_f(name: &str, r: (f64, f64), min: f64) -> Result<()> {
    if !(r.0.is_finite() && r.1.is_finite() && r.0 >= min && r.0 <= r.1) {
        return Err(Error::invalid(format!("{name} range {r:?} is invalid")));
    }
    Ok(())
}

pub(crate) fn check_range_u(name: &str, r: (usize, usize), min: usize) -> Result<()> {
    if r.0 < min || r.0 > r.1 {
        return Err(Error::invalid(format!("{name} range {r:?} is invalid (minimum {min})")));
    }
    Ok(())
}

/// Generates `n` trajectories in parallel. `gen` returns the trajectory and
/// how many times it had to be redrawn.
pub(crate) fn generate<F>(n: usize, first_stream: u64, seed: u64, gen: F) -> Result<(Vec<SupervisedTrajectory>, usize)>
where
    F: Fn(&mut ChaCha8Rng, usize) -> Result<(SupervisedTrajectory, usize)> + Sync,
{
    let out: Vec<(SupervisedTrajectory, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let stream = first_stream + i as u64;
            let mut rng = stream_rng(seed, stream);
            gen(&mut rng, i)
        })
        .collect::<Result<_>>()?;
    let resampled = out.iter().map(|(_, r)| r).sum();
    Ok((out.into_iter().map(|(t, _)| t).collect(), resampled))
}

pub(crate) fn finish(
    d_x: usize,
    d_z: usize,
    trajectories: Vec<SupervisedTrajectory>,
    resampled: usize,
    truth: NoiseTruth,
    scenario: &str,
    config: serde_json::Value,
) -> Result<Simulated> {
    if resampled > 0 {
        log::info!("{scenario}: {resampled} trajectories resampled");
    }
    let dataset = Dataset::new(d_x, d_z, trajectories)?
        .with_metadata("scenario", json!(scenario))
        .with_metadata("config", config)
        .with_metadata("truth", truth.to_json())
        .with_metadata("resampled", json!(resampled));
    Ok(Simulated {
        dataset,
        truth,
        resampled,
    })
}

/// A named simulation setup together with its default filter model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scenario {
    Doppler(DopplerSimConfig),
    Lidar(LidarSimConfig),
    ToyLidar(ToyLidarConfig),
    Pedestrian(PedestrianConfig),
    Linear(LinearGaussianConfig),
}

pub const PRESETS: [&str; 10] = [
    "toy",
    "close",
    "const_v",
    "const_a",
    "free",
    "lidar",
    "toy_lidar",
    "toy_doppler",
    "pedestrian",
    "linear",
];

impl Scenario {
    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "toy_doppler" => Scenario::Doppler(DopplerSimConfig::preset(Benchmark::Toy)),
            "lidar" => Scenario::Lidar(LidarSimConfig::default()),
            "toy_lidar" => Scenario::ToyLidar(ToyLidarConfig::default()),
            "pedestrian" => Scenario::Pedestrian(PedestrianConfig::default()),
            "linear" => Scenario::Linear(LinearGaussianConfig::default()),
            other => match other.parse::<Benchmark>() {
                Ok(b) => Scenario::Doppler(DopplerSimConfig::preset(b)),
                Err(_) => {
                    return Err(Error::invalid(format!(
                        "unknown preset '{other}' (expected one of {})",
                        PRESETS.join(", ")
                    )))
                }
            },
        })
    }

    pub fn seed(&self) -> u64 {
        match self {
            Scenario::Doppler(c) => c.seed,
            Scenario::Lidar(c) => c.seed,
            Scenario::ToyLidar(c) => c.seed,
            Scenario::Pedestrian(c) => c.seed,
            Scenario::Linear(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            Scenario::Doppler(c) => c.seed = seed,
            Scenario::Lidar(c) => c.seed = seed,
            Scenario::ToyLidar(c) => c.seed = seed,
            Scenario::Pedestrian(c) => c.seed = seed,
            Scenario::Linear(c) => c.seed = seed,
        }
    }

    /// Simulates `n` trajectories from streams `first_stream..`.
    pub fn simulate(&self, n: usize, first_stream: u64) -> Result<Simulated> {
        match self {
            Scenario::Doppler(c) => simulate_doppler(&DopplerSimConfig {
                n_trajectories: n,
                first_stream,
                ..c.clone()
            }),
            Scenario::Lidar(c) => simulate_lidar(&LidarSimConfig {
                n_trajectories: n,
                first_stream,
                ..c.clone()
            }),
            Scenario::ToyLidar(c) => simulate_toy_lidar(&ToyLidarConfig {
                n_trajectories: n,
                first_stream,
                ..c.clone()
            }),
            Scenario::Pedestrian(c) => simulate_pedestrian(&PedestrianConfig {
                n_trajectories: n,
                first_stream,
                ..c.clone()
            }),
            Scenario::Linear(c) => simulate_linear_gaussian(&LinearGaussianConfig {
                n_trajectories: n,
                first_stream,
                ..c.clone()
            }),
        }
    }

    /// Train and test sets from disjoint stream ranges.
    pub fn simulate_split(&self, n_train: usize, n_test: usize) -> Result<(Simulated, Simulated)> {
        Ok((self.simulate(n_train, 0)?, self.simulate(n_test, TEST_STREAM_OFFSET)?))
    }

    /// The filter model of `baseline` for this scenario. Only the Doppler
    /// scenarios distinguish baselines; the others use their linear model.
    pub fn model(&self, baseline: Baseline) -> Result<ModelSpec> {
        match self {
            Scenario::Doppler(_) => Ok(ModelSpec::doppler(baseline)),
            _ if baseline != Baseline::Kf => Err(Error::invalid(format!(
                "baseline {baseline} is only defined for the Doppler scenarios"
            ))),
            Scenario::Lidar(_) => Ok(ModelSpec::lidar()),
            Scenario::ToyLidar(_) => Ok(ModelSpec::toy_lidar()),
            Scenario::Pedestrian(_) => Ok(ModelSpec::video()),
            Scenario::Linear(c) => c.model(),
        }
    }

    /// Recovers the scenario that produced `ds` from its metadata. Imported
    /// video ground truth maps to the pedestrian scenario, whose filter
    /// model it shares.
    pub fn from_metadata(ds: &Dataset) -> Result<Self> {
        if ds.metadata.get("source").and_then(|v| v.as_str()) == Some("mot-groundtruth") {
            return Ok(Scenario::Pedestrian(PedestrianConfig::default()));
        }
        let name = ds
            .metadata
            .get("scenario")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Schema("dataset metadata names no scenario".into()))?;
        let config = ds.metadata.get("config").cloned().unwrap_or(serde_json::Value::Null);
        let parse = |what: &str, e: serde_json::Error| Error::Schema(format!("{what} config in metadata: {e}"));
        Ok(match name {
            "doppler" => Scenario::Doppler(serde_json::from_value(config).map_err(|e| parse(name, e))?),
            "lidar" => Scenario::Lidar(serde_json::from_value(config).map_err(|e| parse(name, e))?),
            "toy_lidar" => Scenario::ToyLidar(serde_json::from_value(config).map_err(|e| parse(name, e))?),
            "pedestrian" => Scenario::Pedestrian(serde_json::from_value(config).map_err(|e| parse(name, e))?),
            "linear" => Scenario::Linear(serde_json::from_value(config).map_err(|e| parse(name, e))?),
            other => return Err(Error::Schema(format!("unknown scenario '{other}' in metadata"))),
        })
    }

    pub fn baselines(&self) -> &'static [Baseline] {
        match self {
            Scenario::Doppler(_) => &Baseline::ALL,
            _ => &[Baseline::Kf],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_simulates_deterministically() {
        for name in PRESETS {
            let sc = Scenario::preset(name).unwrap();
            let a = sc.simulate(3, 0).unwrap();
            let b = sc.simulate(3, 0).unwrap();
            assert_eq!(a.dataset, b.dataset, "{name}");
            let model = sc.model(Baseline::Kf).unwrap();
            assert_eq!(a.dataset.d_x, model.state_dim(), "{name}");
            assert_eq!(a.dataset.d_z, model.obs_dim(), "{name}");
        }
    }

    #[test]
    fn subsets_are_prefixes() {
        let sc = Scenario::preset("free").unwrap();
        let small = sc.simulate(4, 0).unwrap();
        let big = sc.simulate(9, 0).unwrap();
        assert_eq!(small.dataset.trajectories[..], big.dataset.trajectories[..4]);
    }

    #[test]
    fn truth_round_trips_through_metadata() {
        let sc = Scenario::preset("toy").unwrap();
        let s = sc.simulate(2, 0).unwrap();
        assert_eq!(NoiseTruth::from_dataset(&s.dataset).unwrap(), s.truth);
    }

    #[test]
    fn scenario_is_recovered_from_metadata() {
        for name in PRESETS {
            let mut sc = Scenario::preset(name).unwrap();
            sc.set_seed(4);
            let ds = sc.simulate(1, 0).unwrap().dataset;
            let back = Scenario::from_metadata(&ds).unwrap();
            let expected = match sc {
                Scenario::Doppler(c) => Scenario::Doppler(DopplerSimConfig { n_trajectories: 1, ..c }),
                Scenario::Lidar(c) => Scenario::Lidar(LidarSimConfig { n_trajectories: 1, ..c }),
                Scenario::ToyLidar(c) => Scenario::ToyLidar(ToyLidarConfig { n_trajectories: 1, ..c }),
                Scenario::Pedestrian(c) => Scenario::Pedestrian(PedestrianConfig { n_trajectories: 1, ..c }),
                Scenario::Linear(c) => Scenario::Linear(LinearGaussianConfig { n_trajectories: 1, ..c }),
            };
            assert_eq!(back, expected, "{name}");
        }
        let bare = Dataset::new(1, 1, vec![]).unwrap();
        assert!(matches!(Scenario::from_metadata(&bare), Err(Error::Schema(_))));
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(Scenario::preset("nope"), Err(Error::InvalidArgument(_))));
    }
}
