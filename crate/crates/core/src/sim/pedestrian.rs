//! Pedestrian-like bounding-box trajectories in pixel coordinates, standing
//! in for annotated video ground truth.
//!
//! Walkers drift in heading, occasionally turn or stop, sway laterally with
//! their gait, and their boxes wobble with autocorrelated noise. As with
//! annotated video, the observed box is the ground truth; velocity states
//! are finite differences of box centers.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_range_f, check_range_u, finish, generate, uniform, uniform_len, NoiseTruth, Simulated};
use crate::data::trajectory_from_boxes;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PedestrianConfig {
    pub n_trajectories: usize,
    pub length_range: (usize, usize),
    pub frame_size: (f64, f64),
    pub box_height_range: (f64, f64),
    pub aspect_range: (f64, f64),
    /// Walking speed in box heights per frame.
    pub speed_range: (f64, f64),
    /// Per-frame heading diffusion, radians.
    pub heading_std: f64,
    pub turn_prob: f64,
    pub stop_prob: f64,
    pub stop_length_range: (usize, usize),
    /// Lateral gait sway amplitude in box heights.
    pub sway_range: (f64, f64),
    pub sway_period_range: (f64, f64),
    /// AR(1) coefficient and innovation std (box heights) of box wobble.
    pub wobble_ar: f64,
    pub wobble_std: f64,
    pub seed: u64,
    pub first_stream: u64,
}

impl Default for PedestrianConfig {
    fn default() -> Self {
        Self {
            n_trajectories: 1100,
            length_range: (20, 150),
            frame_size: (1920.0, 1080.0),
            box_height_range: (40.0, 200.0),
            aspect_range: (0.35, 0.45),
            speed_range: (0.003, 0.02),
            heading_std: 0.03,
            turn_prob: 0.02,
            stop_prob: 0.01,
            stop_length_range: (5, 25),
            sway_range: (0.0, 0.02),
            sway_period_range: (8.0, 14.0),
            wobble_ar: 0.8,
            wobble_std: 0.01,
            seed: 0,
            first_stream: 0,
        }
    }
}

impl PedestrianConfig {
    pub fn validate(&self) -> Result<()> {
        check_range_u("length", self.length_range, 2)?;
        check_range_u("stop length", self.stop_length_range, 1)?;
        check_range_f("box height", self.box_height_range, f64::MIN_POSITIVE)?;
        check_range_f("aspect", self.aspect_range, f64::MIN_POSITIVE)?;
        check_range_f("speed", self.speed_range, 0.0)?;
        check_range_f("sway", self.sway_range, 0.0)?;
        check_range_f("sway period", self.sway_period_range, f64::MIN_POSITIVE)?;
        let probs_ok = (0.0..=1.0).contains(&self.turn_prob) && (0.0..=1.0).contains(&self.stop_prob);
        if !probs_ok || !(0.0..1.0).contains(&self.wobble_ar) || !(self.wobble_std >= 0.0 && self.heading_std >= 0.0) {
            return Err(Error::invalid("pedestrian noise parameters out of range"));
        }
        if !(self.frame_size.0 > 0.0 && self.frame_size.1 > 0.0) {
            return Err(Error::invalid("frame size must be positive"));
        }
        Ok(())
    }
}

/// Simulates walkers; observations are `(cx, cy, w, h)` boxes.
pub fn simulate_pedestrian(cfg: &PedestrianConfig) -> Result<Simulated> {
    cfg.validate()?;
    let n01 = Normal::new(0.0, 1.0).expect("unit normal");
    let (trajectories, resampled) = generate(cfg.n_trajectories, cfg.first_stream, cfg.seed, |rng, i| {
        let len = uniform_len(rng, cfg.length_range);
        let height = uniform(rng, cfg.box_height_range);
        let width = height * uniform(rng, cfg.aspect_range);
        let mut x = uniform(rng, (0.0, cfg.frame_size.0));
        let mut y = uniform(rng, (0.0, cfg.frame_size.1));
        let cruise = height * uniform(rng, cfg.speed_range);
        let mut heading: f64 = rng.random_range(0.0..2.0 * PI);
        let sway = height * uniform(rng, cfg.sway_range);
        let period = uniform(rng, cfg.sway_period_range);
        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        let mut speed = cruise;
        let mut stopped = 0usize;
        let (mut ew, mut eh) = (0.0, 0.0);
        let innov = cfg.wobble_std * height * (1.0 - cfg.wobble_ar * cfg.wobble_ar).sqrt();
        let mut boxes = Vec::with_capacity(len);
        for t in 0..len {
            let s = sway * (2.0 * PI * t as f64 / period + phase).sin();
            let (sx, sy) = (-heading.sin() * s, heading.cos() * s);
            boxes.push(DVector::from_vec(vec![x + sx, y + sy, width + ew, height + eh]));

            if stopped > 0 {
                stopped -= 1;
                speed *= 0.5;
            } else {
                if rng.random_bool(cfg.stop_prob) {
                    stopped = uniform_len(rng, cfg.stop_length_range);
                }
                speed += 0.3 * (cruise - speed);
            }
            if rng.random_bool(cfg.turn_prob) {
                heading += n01.sample(rng) * 0.8;
            }
            heading += n01.sample(rng) * cfg.heading_std;
            x += speed * heading.cos();
            y += speed * heading.sin();
            ew = cfg.wobble_ar * ew + innov * n01.sample(rng) * (width / height);
            eh = cfg.wobble_ar * eh + innov * n01.sample(rng);
        }
        let id = format!("pedestrian-{}", cfg.first_stream + i as u64);
        Ok((trajectory_from_boxes(&id, boxes)?, 0))
    })?;
    // Observations are the ground truth itself and the motion is not a
    // noisy linear model, so no noise covariance is known.
    finish(6, 4, trajectories, resampled, NoiseTruth::default(), "pedestrian", serde_json::to_value(cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn states_are_finite_differences_of_boxes() {
        let s = simulate_pedestrian(&PedestrianConfig {
            n_trajectories: 10,
            ..Default::default()
        })
        .unwrap();
        for tr in &s.dataset.trajectories {
            for t in 1..tr.len() {
                let z = &tr.observations;
                assert_eq!(tr.states[t][4], z[t][0] - z[t - 1][0]);
                assert_eq!(tr.states[t][5], z[t][1] - z[t - 1][1]);
                assert_eq!(tr.states[t].rows(0, 4), z[t].rows(0, 4));
            }
        }
    }
}
