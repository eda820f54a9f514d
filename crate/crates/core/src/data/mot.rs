//! Import of MOT-challenge style ground-truth files.
//!
//! Rows are `frame, id, bb_left, bb_top, bb_width, bb_height[, considered,
//! class, visibility]`. Each target becomes one trajectory per run of
//! consecutive frames, with observation `(cx, cy, w, h)` and state
//! `(cx, cy, w, h, vx, vy)`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde_json::json;

use super::{Dataset, SupervisedTrajectory};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct MotConfig {
    /// Classes to keep (column 8); `None` keeps every row.
    pub classes: Option<Vec<i64>>,
    /// Drop rows whose "considered" flag (column 7) is zero.
    pub require_considered: bool,
    /// Segments shorter than this are dropped.
    pub min_length: usize,
}

impl Default for MotConfig {
    fn default() -> Self {
        Self {
            classes: Some(vec![1]),
            require_considered: true,
            min_length: 1,
        }
    }
}

/// Which ground-truth files feed the train and test sets.
#[derive(Clone, Debug)]
pub struct MotSplit {
    pub train: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
}

struct Row {
    frame: i64,
    bbox: [f64; 4],
}

/// `MOT20-01/gt/gt.txt` is labelled `MOT20-01`; other files by their stem.
fn video_label(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem == "gt" {
        if let Some(video) = path.parent().and_then(|p| p.parent()).and_then(|p| p.file_name()) {
            return video.to_string_lossy().into_owned();
        }
    }
    stem
}

fn parse_file(path: &Path, cfg: &MotConfig) -> Result<Vec<SupervisedTrajectory>> {
    let text = fs::read_to_string(path)?;
    let label = video_label(path);
    let mut by_target: BTreeMap<i64, Vec<Row>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let position = || format!("{}:{}", path.display(), lineno + 1);
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() < 6 {
            return Err(Error::Parse {
                position: position(),
                reason: format!("expected at least 6 columns, found {}", cols.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            cols[i].parse::<f64>().map_err(|e| Error::Parse {
                position: position(),
                reason: format!("column {}: {e}", i + 1),
            })
        };
        let frame = num(0)?;
        let id = num(1)?;
        if frame.fract() != 0.0 || id.fract() != 0.0 {
            return Err(Error::Parse {
                position: position(),
                reason: "frame and id must be integers".into(),
            });
        }
        if cols.len() > 6 && cfg.require_considered && num(6)? == 0.0 {
            continue;
        }
        if let (Some(classes), true) = (&cfg.classes, cols.len() > 7) {
            let class = num(7)? as i64;
            if !classes.contains(&class) {
                continue;
            }
        }
        let bbox = [num(2)?, num(3)?, num(4)?, num(5)?];
        let rows = by_target.entry(id as i64).or_default();
        if let Some(last) = rows.last() {
            if frame as i64 <= last.frame {
                return Err(Error::Parse {
                    position: position(),
                    reason: format!("frames for target {} are not increasing", id as i64),
                });
            }
        }
        rows.push(Row {
            frame: frame as i64,
            bbox,
        });
    }

    let mut out = Vec::new();
    for (target, rows) in by_target {
        let mut segment = 0usize;
        let mut start = 0usize;
        for i in 1..=rows.len() {
            if i == rows.len() || rows[i].frame != rows[i - 1].frame + 1 {
                let seg = &rows[start..i];
                if seg.len() >= cfg.min_length {
                    out.push(segment_trajectory(&format!("{label}:{target}:{segment}"), seg)?);
                }
                segment += 1;
                start = i;
            }
        }
    }
    Ok(out)
}

fn segment_trajectory(id: &str, rows: &[Row]) -> Result<SupervisedTrajectory> {
    let obs: Vec<DVector<f64>> = rows
        .iter()
        .map(|r| {
            let [left, top, w, h] = r.bbox;
            DVector::from_vec(vec![left + w / 2.0, top + h / 2.0, w, h])
        })
        .collect();
    trajectory_from_boxes(id, obs)
}

/// Builds `(cx, cy, w, h, vx, vy)` states from consecutive `(cx, cy, w, h)`
/// boxes. Velocity is the displacement since the previous frame; the first
/// frame borrows the second frame's velocity.
pub(crate) fn trajectory_from_boxes(id: &str, obs: Vec<DVector<f64>>) -> Result<SupervisedTrajectory> {
    let mut vel: Vec<(f64, f64)> = (0..obs.len())
        .map(|t| {
            if t == 0 {
                (0.0, 0.0)
            } else {
                (obs[t][0] - obs[t - 1][0], obs[t][1] - obs[t - 1][1])
            }
        })
        .collect();
    if vel.len() > 1 {
        vel[0] = vel[1];
    }
    let states = obs
        .iter()
        .zip(&vel)
        .map(|(z, (vx, vy))| DVector::from_vec(vec![z[0], z[1], z[2], z[3], *vx, *vy]))
        .collect();
    SupervisedTrajectory::new(id, states, obs)
}

/// Imports ground-truth files into a single dataset, sorted by trajectory id.
pub fn import_mot_groundtruth(files: &[PathBuf], cfg: &MotConfig) -> Result<Dataset> {
    let parsed: Vec<Vec<SupervisedTrajectory>> = files
        .par_iter()
        .map(|p| parse_file(p, cfg))
        .collect::<Result<_>>()?;
    let mut trajectories: Vec<SupervisedTrajectory> = parsed.into_iter().flatten().collect();
    trajectories.sort_by(|a, b| a.id.cmp(&b.id));
    let mut sources: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
    sources.sort();
    Ok(Dataset::new(6, 4, trajectories)?
        .with_metadata("source", json!("mot-groundtruth"))
        .with_metadata("files", json!(sources)))
}

pub fn import_mot_split(split: &MotSplit, cfg: &MotConfig) -> Result<(Dataset, Dataset)> {
    Ok((
        import_mot_groundtruth(&split.train, cfg)?,
        import_mot_groundtruth(&split.test, cfg)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn finite_difference_states() {
        let dir = tempfile::tempdir().unwrap();
        // Centers (0,0), (1,0), (2,0) with a 10x20 box.
        let f = write(
            dir.path(),
            "a.txt",
            "1,7,-5,-10,10,20,1,1,1\n2,7,-4,-10,10,20,1,1,1\n3,7,-3,-10,10,20,1,1,1\n",
        );
        let ds = import_mot_groundtruth(&[f], &MotConfig::default()).unwrap();
        assert_eq!(ds.len(), 1);
        let tr = &ds.trajectories[0];
        assert_eq!(tr.observations[0].as_slice(), &[0.0, 0.0, 10.0, 20.0]);
        for x in &tr.states {
            assert_eq!(x[4], 1.0);
            assert_eq!(x[5], 0.0);
        }
    }

    #[test]
    fn frame_gap_splits_target() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(dir.path(), "a.txt", "1,3,0,0,1,1\n2,3,1,0,1,1\n5,3,2,0,1,1\n6,3,3,0,1,1\n");
        let ds = import_mot_groundtruth(&[f], &MotConfig::default()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.trajectories[0].id, "a:3:0");
        assert_eq!(ds.trajectories[1].id, "a:3:1");
    }

    #[test]
    fn class_and_considered_filters() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(
            dir.path(),
            "a.txt",
            "1,1,0,0,1,1,1,1,1\n1,2,0,0,1,1,0,1,1\n1,3,0,0,1,1,1,7,1\n",
        );
        let ds = import_mot_groundtruth(std::slice::from_ref(&f), &MotConfig::default()).unwrap();
        assert_eq!(ds.len(), 1);
        let all = MotConfig {
            classes: None,
            require_considered: false,
            min_length: 1,
        };
        assert_eq!(import_mot_groundtruth(&[f], &all).unwrap().len(), 3);
    }

    #[test]
    fn bad_rows_report_position() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(dir.path(), "a.txt", "1,1,0,0,1,1\n2,1,x,0,1,1\n");
        match import_mot_groundtruth(&[f], &MotConfig::default()) {
            Err(Error::Parse { position, .. }) => assert!(position.ends_with(":2")),
            other => panic!("unexpected {other:?}"),
        }
        let g = write(dir.path(), "b.txt", "2,1,0,0,1,1\n1,1,0,0,1,1\n");
        assert!(matches!(
            import_mot_groundtruth(&[g], &MotConfig::default()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn import_is_order_independent() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.txt", "1,1,0,0,1,1\n2,1,1,0,1,1\n");
        let b = write(dir.path(), "b.txt", "1,1,5,5,1,1\n1,2,0,0,2,2\n");
        let x = import_mot_groundtruth(&[a.clone(), b.clone()], &MotConfig::default()).unwrap();
        let y = import_mot_groundtruth(&[b, a], &MotConfig::default()).unwrap();
        assert_eq!(x, y);
        assert_eq!(x.len(), 3);
    }

    #[test]
    fn mot_directory_layout_label() {
        assert_eq!(video_label(Path::new("/data/MOT20-02/gt/gt.txt")), "MOT20-02");
        assert_eq!(video_label(Path::new("clip.txt")), "clip");
    }
}
