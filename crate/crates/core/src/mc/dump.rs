//! Flat state dump: a JSON header next to a little-endian `f64` blob.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ProcessPair;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateHeader {
    pub n: usize,
    pub d: usize,
    pub n_particles: usize,
    pub start_node: usize,
    pub end_node: usize,
    pub dt: f64,
    pub seed: u64,
    /// Human-readable description of the blob layout.
    pub layout: String,
    pub y_len: usize,
    pub z_len: usize,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

/// Writes `<stem>.json` and `<stem>.bin`; returns both paths.
pub fn write_state(stem: &Path, pair: &ProcessPair, seed: u64) -> Result<(PathBuf, PathBuf)> {
    let (hp, bp) = paths(stem);
    let header = StateHeader {
        n: pair.n(),
        d: pair.d(),
        n_particles: pair.n_particles(),
        start_node: pair.start(),
        end_node: pair.end(),
        dt: pair.dt(),
        seed,
        layout: "f64 little-endian; Y[node][particle][i] then Z[node][particle][i*d+j]".into(),
        y_len: pair.y_raw().len(),
        z_len: pair.z_raw().len(),
    };
    fs::write(&hp, serde_json::to_string_pretty(&header)?)?;
    let mut w = BufWriter::new(fs::File::create(&bp)?);
    for v in pair.y_raw().iter().chain(pair.z_raw()) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok((hp, bp))
}

pub fn read_state(stem: &Path) -> Result<(StateHeader, ProcessPair)> {
    let (hp, bp) = paths(stem);
    let header: StateHeader = serde_json::from_str(&fs::read_to_string(hp)?)?;
    let bytes = fs::read(bp)?;
    if bytes.len() != 8 * (header.y_len + header.z_len) {
        return Err(Error::invalid("state", "blob length does not match header"));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let (y, z) = vals.split_at(header.y_len);
    let pair = ProcessPair::from_fields(
        header.n,
        header.d,
        header.n_particles,
        header.start_node,
        header.dt,
        y.to_vec(),
        z.to_vec(),
    )?;
    Ok((header, pair))
}
