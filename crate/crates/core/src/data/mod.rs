//! Supervised trajectory datasets: container, file format and MOT import.

mod format;
mod mot;

use std::collections::{BTreeMap, HashSet};

use nalgebra::DVector;
use serde_json::Value;

use crate::error::{Error, Result};

pub use format::{read_dataset, write_csv, write_dataset, DATASET_MAGIC, DATASET_SCHEMA_VERSION};
pub use mot::{import_mot_groundtruth, import_mot_split, MotConfig, MotSplit};
pub(crate) use mot::trajectory_from_boxes;

/// Paired true states and observations of one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedTrajectory {
    pub id: String,
    pub states: Vec<DVector<f64>>,
    pub observations: Vec<DVector<f64>>,
}

impl SupervisedTrajectory {
    pub fn new(
        id: impl Into<String>,
        states: Vec<DVector<f64>>,
        observations: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let t = Self {
            id: id.into(),
            states,
            observations,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::Schema(format!("trajectory '{}' is empty", self.id)));
        }
        if self.states.len() != self.observations.len() {
            return Err(Error::Schema(format!(
                "trajectory '{}' has {} states but {} observations",
                self.id,
                self.states.len(),
                self.observations.len()
            )));
        }
        let dx = self.states[0].len();
        let dz = self.observations[0].len();
        for (t, (x, z)) in self.states.iter().zip(&self.observations).enumerate() {
            if x.len() != dx || z.len() != dz {
                return Err(Error::Schema(format!(
                    "trajectory '{}' changes dimension at step {t}",
                    self.id
                )));
            }
            if x.iter().chain(z.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!(
                    "trajectory '{}' has a non-finite value at step {t}",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub d_x: usize,
    pub d_z: usize,
    pub trajectories: Vec<SupervisedTrajectory>,
    pub metadata: BTreeMap<String, Value>,
}

impl Dataset {
    pub fn new(d_x: usize, d_z: usize, trajectories: Vec<SupervisedTrajectory>) -> Result<Self> {
        let ds = Self {
            d_x,
            d_z,
            trajectories,
            metadata: BTreeMap::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: Value) -> Self {
        self.metadata.insert(key.into(), value);
        self
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::with_capacity(self.trajectories.len());
        for tr in &self.trajectories {
            tr.validate()?;
            if tr.states[0].len() != self.d_x || tr.observations[0].len() != self.d_z {
                return Err(Error::Schema(format!(
                    "trajectory '{}' is {}/{}, dataset is {}/{}",
                    tr.id,
                    tr.states[0].len(),
                    tr.observations[0].len(),
                    self.d_x,
                    self.d_z
                )));
            }
            if !ids.insert(tr.id.as_str()) {
                return Err(Error::Schema(format!("duplicate trajectory id '{}'", tr.id)));
            }
        }
        Ok(())
    }

    /// First `n` trajectories, metadata preserved.
    pub fn head(&self, n: usize) -> Self {
        Self {
            d_x: self.d_x,
            d_z: self.d_z,
            trajectories: self.trajectories.iter().take(n).cloned().collect(),
            metadata: self.metadata.clone(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            d_x: self.d_x,
            d_z: self.d_z,
            trajectories: indices.iter().map(|&i| self.trajectories[i].clone()).collect(),
            metadata: self.metadata.clone(),
        }
    }

    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(id: &str, n: usize) -> SupervisedTrajectory {
        SupervisedTrajectory::new(
            id,
            vec![DVector::zeros(2); n],
            vec![DVector::zeros(1); n],
        )
        .unwrap()
    }

    #[test]
    fn rejects_mismatched_lengths() {
        let e = SupervisedTrajectory::new("a", vec![DVector::zeros(2); 2], vec![DVector::zeros(1); 3]);
        assert!(matches!(e, Err(Error::Schema(_))));
        assert!(SupervisedTrajectory::new("a", vec![], vec![]).is_err());
        let nan = SupervisedTrajectory::new("a", vec![DVector::from_element(2, f64::NAN)], vec![DVector::zeros(1)]);
        assert!(nan.is_err());
    }

    #[test]
    fn rejects_duplicate_ids_and_dims() {
        assert!(Dataset::new(2, 1, vec![traj("a", 2), traj("a", 3)]).is_err());
        assert!(Dataset::new(3, 1, vec![traj("a", 2)]).is_err());
        let ds = Dataset::new(2, 1, vec![traj("a", 2), traj("b", 3)]).unwrap();
        assert_eq!(ds.total_steps(), 5);
        assert_eq!(ds.head(1).len(), 1);
    }
}
