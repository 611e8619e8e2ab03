use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HyperParams;
use crate::error::{Error, Result};

/// Observations `y_{1:T}` and, for simulated data, the latent path.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub x_true: Option<Vec<f64>>,
    pub meta: DatasetMeta,
}

/// Sidecar metadata, stored as JSON next to the CSV.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub model: String,
    pub seed: u64,
    pub theta: Option<HyperParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obs_sd: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    t: usize,
    y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x_true: Option<f64>,
}

impl Dataset {
    pub fn from_observations(y: Vec<f64>) -> Self {
        Self {
            y,
            x_true: None,
            meta: DatasetMeta::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// First `len` time points.
    pub fn prefix(&self, len: usize) -> Dataset {
        Dataset {
            y: self.y[..len].to_vec(),
            x_true: self.x_true.as_ref().map(|x| x[..len].to_vec()),
            meta: self.meta.clone(),
        }
    }

    /// `<stem>.meta.json` next to `csv_path`.
    pub fn meta_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("meta.json")
    }

    /// Writes `t,y[,x_true]` rows plus the metadata sidecar.
    pub fn write(&self, csv_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(csv_path)?;
        if self.x_true.is_some() {
            w.write_record(["t", "y", "x_true"])?;
        } else {
            w.write_record(["t", "y"])?;
        }
        for (t, &y) in self.y.iter().enumerate() {
            let mut rec = vec![(t + 1).to_string(), y.to_string()];
            if let Some(x) = &self.x_true {
                rec.push(x[t].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        std::fs::write(Self::meta_path(csv_path), serde_json::to_string_pretty(&self.meta)? + "\n")?;
        Ok(())
    }

    /// Reads a dataset CSV; the sidecar is optional.
    pub fn read(csv_path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(csv_path)?;
        let headers = r.headers()?.clone();
        if headers.get(0) != Some("t") || headers.get(1) != Some("y") {
            return Err(Error::InvalidDataset(format!(
                "{}: expected header `t,y[,x_true]`",
                csv_path.display()
            )));
        }
        let has_x = headers.get(2) == Some("x_true");
        let mut y = Vec::new();
        let mut x = Vec::new();
        for (i, row) in r.deserialize::<Row>().enumerate() {
            let row = row?;
            if row.t != i + 1 {
                return Err(Error::InvalidDataset(format!("row {}: expected t = {}, got {}", i + 2, i + 1, row.t)));
            }
            y.push(row.y);
            if has_x {
                x.push(row.x_true.ok_or_else(|| Error::InvalidDataset(format!("row {}: missing x_true", i + 2)))?);
            }
        }
        if y.is_empty() {
            return Err(Error::InvalidDataset(format!("{}: no rows", csv_path.display())));
        }
        let meta_path = Self::meta_path(csv_path);
        let meta = if meta_path.exists() {
            serde_json::from_str(&std::fs::read_to_string(meta_path)?)?
        } else {
            DatasetMeta::default()
        };
        Ok(Self {
            y,
            x_true: has_x.then_some(x),
            meta,
        })
    }
}
