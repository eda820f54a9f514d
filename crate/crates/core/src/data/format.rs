//! Binary dataset container.
//!
//! Layout: the magic bytes `OKFD1`, a little-endian `u64` header length, a
//! UTF-8 JSON header, then the payload. For each trajectory, in header
//! order, the payload holds `len * d_x` state values followed by
//! `len * d_z` observation values, row-major per time step, as
//! little-endian IEEE-754 `f64`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Dataset, SupervisedTrajectory};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 5] = b"OKFD1";
pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    d_x: usize,
    d_z: usize,
    metadata: BTreeMap<String, Value>,
    trajectories: Vec<TrajectoryEntry>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryEntry {
    id: String,
    len: usize,
}

fn encode(ds: &Dataset) -> Result<Vec<u8>> {
    if ds.trajectories.is_empty() {
        return Err(Error::Schema("refusing to write a dataset without trajectories".into()));
    }
    ds.validate()?;
    let header = Header {
        schema_version: DATASET_SCHEMA_VERSION,
        d_x: ds.d_x,
        d_z: ds.d_z,
        metadata: ds.metadata.clone(),
        trajectories: ds
            .trajectories
            .iter()
            .map(|t| TrajectoryEntry {
                id: t.id.clone(),
                len: t.len(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let payload_len = ds.total_steps() * (ds.d_x + ds.d_z) * 8;
    let mut buf = Vec::with_capacity(DATASET_MAGIC.len() + 8 + header.len() + payload_len);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for t in &ds.trajectories {
        for v in t.states.iter().flat_map(|x| x.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in t.observations.iter().flat_map(|z| z.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

/// Writes `ds` to `path` through a temporary file in the same directory.
pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(ds)?;
    let tmp = path.with_extension("okfd.partial");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn parse_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        position: format!("byte {offset}"),
        reason: reason.into(),
    }
}

fn decode(bytes: &[u8]) -> Result<Dataset> {
    let magic_len = DATASET_MAGIC.len();
    if bytes.len() < magic_len + 8 || &bytes[..magic_len] != DATASET_MAGIC {
        return Err(parse_err(0, "missing OKFD1 magic"));
    }
    let mut len_bytes = [0u8; 8];
    len_bytes.copy_from_slice(&bytes[magic_len..magic_len + 8]);
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let header_start = magic_len + 8;
    let payload_start = header_start
        .checked_add(header_len)
        .filter(|end| *end <= bytes.len())
        .ok_or_else(|| parse_err(header_start, "header extends past end of file"))?;
    let header: Header = serde_json::from_slice(&bytes[header_start..payload_start])
        .map_err(|e| parse_err(header_start, format!("header: {e}")))?;
    if header.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "unsupported dataset schema version {}",
            header.schema_version
        )));
    }
    let width = header.d_x + header.d_z;
    let expected: usize = header.trajectories.iter().map(|t| t.len * width * 8).sum();
    let payload = &bytes[payload_start..];
    if payload.len() != expected {
        return Err(parse_err(
            payload_start,
            format!("payload has {} bytes, header implies {expected}", payload.len()),
        ));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut take = |n: usize| DVector::from_iterator(n, values.by_ref().take(n));
    let mut trajectories = Vec::with_capacity(header.trajectories.len());
    for entry in header.trajectories {
        let states = (0..entry.len).map(|_| take(header.d_x)).collect();
        let observations = (0..entry.len).map(|_| take(header.d_z)).collect();
        trajectories.push(SupervisedTrajectory {
            id: entry.id,
            states,
            observations,
        });
    }
    let ds = Dataset {
        d_x: header.d_x,
        d_z: header.d_z,
        trajectories,
        metadata: header.metadata,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode(&fs::read(path)?)
}

/// Plain-text export: `id,t,x0..,z0..` with 17 significant digits.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    out.push_str("id,t");
    for i in 0..ds.d_x {
        out.push_str(&format!(",x{i}"));
    }
    for i in 0..ds.d_z {
        out.push_str(&format!(",z{i}"));
    }
    out.push('\n');
    for tr in &ds.trajectories {
        for (t, (x, z)) in tr.states.iter().zip(&tr.observations).enumerate() {
            out.push_str(&format!("{},{t}", tr.id));
            for v in x.iter().chain(z.iter()) {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Dataset {
        let tr = |id: &str, n: usize, s: f64| {
            SupervisedTrajectory::new(
                id,
                (0..n).map(|t| DVector::from_vec(vec![s * t as f64, 0.1 + t as f64 / 3.0])).collect(),
                (0..n).map(|t| DVector::from_vec(vec![(t as f64).sin()])).collect(),
            )
            .unwrap()
        };
        Dataset::new(2, 1, vec![tr("a", 3, 1.5), tr("b", 5, -0.25)])
            .unwrap()
            .with_metadata("preset", Value::from("toy"))
    }

    #[test]
    fn round_trip() {
        let ds = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.okfd");
        write_dataset(&ds, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn empty_dataset_is_not_written() {
        let ds = Dataset::new(2, 1, vec![]).unwrap();
        assert!(matches!(encode(&ds), Err(Error::Schema(_))));
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let bytes = encode(&sample()).unwrap();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Parse { .. })), "cut at {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode(&extra), Err(Error::Parse { .. })));
    }

    #[test]
    fn csv_has_one_row_per_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&sample(), &path).unwrap();
        let text = fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 1 + 8);
        assert!(text.starts_with("id,t,x0,x1,z0\n"));
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        (1usize..4, 1usize..3, 1usize..5).prop_flat_map(|(dx, dz, k)| {
            prop::collection::vec(
                (1usize..6).prop_flat_map(move |n| {
                    (
                        prop::collection::vec(prop::collection::vec(-1e12f64..1e12, dx), n),
                        prop::collection::vec(prop::collection::vec(-1e12f64..1e12, dz), n),
                    )
                }),
                k,
            )
            .prop_map(move |trs| {
                let trajectories = trs
                    .into_iter()
                    .enumerate()
                    .map(|(i, (xs, zs))| SupervisedTrajectory {
                        id: format!("t{i}"),
                        states: xs.into_iter().map(DVector::from_vec).collect(),
                        observations: zs.into_iter().map(DVector::from_vec).collect(),
                    })
                    .collect();
                Dataset::new(dx, dz, trajectories).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn encode_decode_is_lossless(ds in arb_dataset()) {
            let bytes = encode(&ds).unwrap();
            prop_assert_eq!(decode(&bytes).unwrap(), ds);
        }
    }
}
