use serde::{Deserialize, Serialize};

use super::fits::fit_power_law;
use super::record::RunRecord;
use super::sweep::{sweep, SweepGrid};
use super::TrainConfig;
use crate::data::DatasetSize;
use crate::models::ModelKind;
use crate::theory::{i_k_from_c1, IkLimit, IkResult, ScalingFit};
use crate::{ensure, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorizationPoint {
    pub k: usize,
    /// `c₁` at the first evaluation.
    pub c1_initial: f64,
    pub i_k: IkResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorizationScaling {
    pub points: Vec<MemorizationPoint>,
    /// Fit over the finite `I_K(∞)` values; `None` with fewer than two.
    pub fit: Option<ScalingFit>,
    /// K values whose integral diverged (capacity constrained).
    pub excluded: Vec<usize>,
    /// K values whose run failed, with the reason.
    pub failed: Vec<(usize, String)>,
}

/// `I_K` from the `c₁` column on the regular eval grid. Time is measured in
/// gradient-flow units, iterations × learning rate.
pub fn i_k_from_record(record: &RunRecord, eval_interval: usize, lr: f64) -> Result<IkResult> {
    let c1: Vec<f64> = record
        .rows
        .iter()
        .filter(|r| r.iteration % eval_interval == 0)
        .map(|r| r.c1)
        .collect();
    ensure!(
        c1.iter().all(|v| v.is_finite()),
        Domain,
        "c1 series has non-finite entries"
    );
    i_k_from_c1(&c1, eval_interval as f64 * lr)
}

/// Trains the MLP alone at every K, integrates `c₁`, and fits `I_K(∞) ∝ K^ν`.
pub fn measure_memorization_scaling(
    ks: &[usize],
    base: &TrainConfig,
    workers: usize,
) -> Result<MemorizationScaling> {
    ensure!(!ks.is_empty(), Config, "no K values given");
    let mut cfg = base.clone();
    cfg.model.kind = ModelKind::MlpOnly;
    let grid = SweepGrid {
        ks: ks.iter().map(|&k| DatasetSize::Finite(k)).collect(),
        ns: vec![cfg.data.n],
        seeds: vec![cfg.seed],
    };
    let result = sweep(&grid, &cfg, workers)?;
    let mut points = Vec::new();
    let mut failed = Vec::new();
    for (cell, &k) in result.cells.iter().zip(ks) {
        let Some(record) = &cell.record else {
            failed.push((k, format!("{:?}", cell.outcome)));
            continue;
        };
        match i_k_from_record(record, cfg.eval_interval, cfg.lr) {
            Ok(i_k) => points.push(MemorizationPoint {
                k,
                c1_initial: record.rows[0].c1,
                i_k,
            }),
            Err(e) => failed.push((k, e.to_string())),
        }
    }
    let mut excluded = Vec::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for p in &points {
        match p.i_k.limit {
            IkLimit::Finite(v) => {
                xs.push(p.k as f64);
                ys.push(v);
            }
            IkLimit::Divergent => {
                log::warn!("I_K diverges at K = {}; excluded from the fit", p.k);
                excluded.push(p.k);
            }
        }
    }
    let fit = if xs.len() >= 2 {
        Some(fit_power_law(&xs, &ys)?)
    } else {
        None
    };
    Ok(MemorizationScaling {
        points,
        fit,
        excluded,
        failed,
    })
}
