//! CSV tables written by the experiment commands.
//!
//! Every row type derives both `Serialize` and `Deserialize`, so each table
//! can be read back by [`read_rows`].

use std::collections::HashSet;
use std::hash::Hash;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoglikRow {
    pub method: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub len: usize,
    pub replicate: usize,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub method: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub len: usize,
    pub replicates: usize,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssRow {
    pub method: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub len: usize,
    pub t: usize,
    pub mean_ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteringRow {
    pub method: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub len: usize,
    pub t: usize,
    pub mean: f64,
    pub reference: f64,
    pub abs_error: f64,
}

/// `pf-run` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateLoglik {
    pub replicate: usize,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssPoint {
    pub t: usize,
    pub mean_ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteringPoint {
    pub t: usize,
    pub mean: f64,
    pub reference: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRow {
    pub t: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub value: f64,
    pub density: f64,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    r.deserialize().map(|row| row.map_err(|e| CliError::Io(format!("{}: {e}", path.display())))).collect()
}

/// First duplicated key, if any.
pub fn duplicate_key<T, K: Hash + Eq + Clone>(rows: &[T], key: impl Fn(&T) -> K) -> Option<K> {
    let mut seen = HashSet::new();
    rows.iter().map(key).find(|k| !seen.insert(k.clone()))
}
