use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::Result;

/// Metrics at one evaluation step, measured before that iteration's update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub iteration: usize,
    pub train_loss: f64,
    pub icl_acc: f64,
    pub icl_loss: f64,
    /// NaN when the dataset is infinite.
    pub iwl_acc: f64,
    pub iwl_loss: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// NaN except for the minimal model.
    pub beta: f64,
    pub w: f64,
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStop {
    Budget,
    IclAcquired,
    Memorized,
    Divergence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rows: Vec<EvalRow>,
    pub stop: RunStop,
    /// Iterations actually performed.
    pub iterations: usize,
}

impl RunRecord {
    pub fn last(&self) -> Option<&EvalRow> {
        self.rows.last()
    }

    pub fn final_icl_acc(&self) -> f64 {
        self.last().map_or(f64::NAN, |r| r.icl_acc)
    }

    pub fn final_iwl_acc(&self) -> f64 {
        self.last().map_or(f64::NAN, |r| r.iwl_acc)
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(w.into_inner()
            .map_err(|e| std::io::Error::other(e.to_string()))?)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_bytes()?)?;
        Ok(())
    }

    /// Reads eval rows; the stop cause is not stored in the CSV.
    pub fn read_csv(path: &Path) -> Result<Vec<EvalRow>> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<EvalRow>, _>>()?;
        Ok(rows)
    }

    /// Hex SHA-256 of the CSV serialization.
    pub fn content_hash(&self) -> Result<String> {
        Ok(hex_digest(&self.to_csv_bytes()?))
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Provenance written next to a run's CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: TrainConfig,
    pub seed: u64,
    pub content_hash: String,
    pub wall_time_secs: f64,
    pub stop: RunStop,
    pub iterations: usize,
    pub t_icl: Option<usize>,
    pub transience: Option<usize>,
}
