use serde::{Deserialize, Serialize};

use super::detect::{detect_t_icl, detect_transience, T_ICL_THRESHOLD};
use super::record::{RunRecord, RunStop};
use super::{train, TrainConfig};
use crate::data::DatasetSize;
use crate::{ensure, Result};

/// Grid axes. Cells are ordered K-major, then N, then seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub ks: Vec<DatasetSize>,
    pub ns: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    pub fn len(&self) -> usize {
        self.ks.len() * self.ns.len() * self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cells(&self) -> Vec<(DatasetSize, usize, u64)> {
        let mut out = Vec::with_capacity(self.len());
        for &k in &self.ks {
            for &n in &self.ns {
                for &s in &self.seeds {
                    out.push((k, n, s));
                }
            }
        }
        out
    }

    /// The base config with one cell's coordinates applied.
    pub fn cell_config(base: &TrainConfig, k: DatasetSize, n: usize, seed: u64) -> TrainConfig {
        let mut c = base.clone();
        c.data.k = k;
        c.data.n = n;
        c.seed = seed;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub final_icl_acc: f64,
    pub final_iwl_acc: f64,
    pub t_icl: Option<usize>,
    pub transience: Option<usize>,
    pub stop: RunStop,
    pub iterations: usize,
}

impl CellSummary {
    pub fn of(record: &RunRecord) -> Self {
        Self {
            final_icl_acc: record.final_icl_acc(),
            final_iwl_acc: record.final_iwl_acc(),
            t_icl: detect_t_icl(&record.rows, T_ICL_THRESHOLD),
            transience: detect_transience(&record.rows),
            stop: record.stop,
            iterations: record.iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Done { summary: CellSummary },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub k: DatasetSize,
    pub n: usize,
    pub seed: u64,
    pub outcome: CellOutcome,
    /// Full record for completed cells.
    pub record: Option<RunRecord>,
}

impl SweepCell {
    pub fn summary(&self) -> Option<&CellSummary> {
        match &self.outcome {
            CellOutcome::Done { summary } => Some(summary),
            CellOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub grid: SweepGrid,
    pub cells: Vec<SweepCell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepStatus {
    Complete,
    Partial,
    Failed,
}

/// One CSV row per cell.
#[derive(Debug, Serialize, Deserialize)]
pub struct SweepCsvRow {
    pub k: String,
    pub n: usize,
    pub seed: u64,
    pub status: String,
    pub final_icl_acc: Option<f64>,
    pub final_iwl_acc: Option<f64>,
    pub t_icl: Option<usize>,
    pub transience: Option<usize>,
    pub iterations: Option<usize>,
    pub reason: String,
}

impl SweepResult {
    pub fn status(&self) -> SweepStatus {
        let failed = self.cells.iter().filter(|c| c.summary().is_none()).count();
        match failed {
            0 => SweepStatus::Complete,
            f if f == self.cells.len() => SweepStatus::Failed,
            _ => SweepStatus::Partial,
        }
    }

    /// Completed cells at one `(K, N)` coordinate, in seed order.
    pub fn at(&self, k: DatasetSize, n: usize) -> impl Iterator<Item = &SweepCell> {
        self.cells.iter().filter(move |c| c.k == k && c.n == n)
    }

    pub fn csv_rows(&self) -> Vec<SweepCsvRow> {
        self.cells
            .iter()
            .map(|c| {
                let s = c.summary();
                SweepCsvRow {
                    k: c.k.to_string(),
                    n: c.n,
                    seed: c.seed,
                    status: if s.is_some() {
                        "done".into()
                    } else {
                        "failed".into()
                    },
                    final_icl_acc: s.map(|s| s.final_icl_acc),
                    final_iwl_acc: s.map(|s| s.final_iwl_acc),
                    t_icl: s.and_then(|s| s.t_icl),
                    transience: s.and_then(|s| s.transience),
                    iterations: s.map(|s| s.iterations),
                    reason: match &c.outcome {
                        CellOutcome::Failed { reason } => reason.clone(),
                        CellOutcome::Done { .. } => String::new(),
                    },
                }
            })
            .collect()
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in self.csv_rows() {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(w.into_inner()
            .map_err(|e| std::io::Error::other(e.to_string()))?)
    }
}

/// Runs every cell of `grid` with `train` on `workers` threads.
pub fn sweep(grid: &SweepGrid, base: &TrainConfig, workers: usize) -> Result<SweepResult> {
    sweep_with(grid, base, workers, train)
}

/// Like [`sweep`] with a custom per-cell runner.
pub fn sweep_with<F>(
    grid: &SweepGrid,
    base: &TrainConfig,
    workers: usize,
    runner: F,
) -> Result<SweepResult>
where
    F: Fn(&TrainConfig) -> Result<RunRecord> + Sync,
{
    ensure!(!grid.is_empty(), Config, "sweep grid is empty");
    ensure!(workers >= 1, Config, "need at least one worker");
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| crate::Error::Config(format!("thread pool: {e}")))?;
    let coords = grid.cells();
    let cells = pool.install(|| {
        use rayon::prelude::*;
        coords
            .par_iter()
            .map(|&(k, n, seed)| {
                let cfg = SweepGrid::cell_config(base, k, n, seed);
                let (outcome, record) = match runner(&cfg) {
                    Ok(r) => (
                        CellOutcome::Done {
                            summary: CellSummary::of(&r),
                        },
                        Some(r),
                    ),
                    Err(e) => {
                        log::warn!("cell K={k} N={n} seed={seed} failed: {e}");
                        (
                            CellOutcome::Failed {
                                reason: e.to_string(),
                            },
                            None,
                        )
                    }
                };
                SweepCell {
                    k,
                    n,
                    seed,
                    outcome,
                    record,
                }
            })
            .collect::<Vec<_>>()
    });
    Ok(SweepResult {
        grid: grid.clone(),
        cells,
    })
}
