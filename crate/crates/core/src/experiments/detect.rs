use super::record::{EvalRow, RunRecord};

/// ICL accuracy threshold for acquisition.
pub const T_ICL_THRESHOLD: f64 = 0.95;

/// First evaluated iteration with ICL accuracy `>= threshold`.
pub fn detect_t_icl(rows: &[EvalRow], threshold: f64) -> Option<usize> {
    rows.iter()
        .find(|r| r.icl_acc >= threshold)
        .map(|r| r.iteration)
}

/// First iteration with ICL accuracy `<= 0.90` after a peak of at least `0.99`.
pub fn detect_transience(rows: &[EvalRow]) -> Option<usize> {
    let peak = rows.iter().position(|r| r.icl_acc >= 0.99)?;
    rows[peak..]
        .iter()
        .find(|r| r.icl_acc <= 0.90)
        .map(|r| r.iteration)
}

/// One `(L_ICL, L_IWL)` pair with the small-loss reference `−½ log L_ICL`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransiencePoint {
    pub iteration: usize,
    pub icl_acc: f64,
    pub icl_loss: f64,
    pub iwl_loss: f64,
    /// NaN when `L_ICL ∉ (0, 1)`.
    pub reference: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransienceCurve {
    pub acquired: bool,
    pub points: Vec<TransiencePoint>,
}

impl TransienceCurve {
    /// `|L_IWL − ref| / L_IWL` on points with a defined reference.
    pub fn relative_errors(&self) -> Vec<f64> {
        self.points
            .iter()
            .filter(|p| p.reference.is_finite() && p.iwl_loss > 0.0)
            .map(|p| (p.iwl_loss - p.reference).abs() / p.iwl_loss)
            .collect()
    }

    /// `|L_ICL − (−½ log L_IWL)| / L_ICL`, the relation expected once the MLP
    /// has memorized the dataset and ICL has faded.
    pub fn memorized_relative_errors(&self) -> Vec<f64> {
        self.points
            .iter()
            .filter(|p| p.iwl_loss > 0.0 && p.iwl_loss < 1.0 && p.icl_loss > 0.0)
            .map(|p| (p.icl_loss + 0.5 * p.iwl_loss.ln()).abs() / p.icl_loss)
            .collect()
    }

    /// Points from the last evaluation at ICL accuracy `>= 0.99` onward, the
    /// stretch over which acquired ICL decays. Empty without such a peak.
    pub fn decay_window(&self) -> TransienceCurve {
        let start = self.points.iter().rposition(|p| p.icl_acc >= 0.99);
        let points = match start {
            Some(i) => self.points[i..].to_vec(),
            None => Vec::new(),
        };
        TransienceCurve {
            acquired: self.acquired,
            points,
        }
    }
}

/// Loss pairs from `t_ICL` onward.
pub fn transience_curve(rows: &[EvalRow]) -> TransienceCurve {
    let Some(t) = detect_t_icl(rows, T_ICL_THRESHOLD) else {
        return TransienceCurve {
            acquired: false,
            points: Vec::new(),
        };
    };
    let points = rows
        .iter()
        .filter(|r| r.iteration >= t)
        .map(|r| TransiencePoint {
            iteration: r.iteration,
            icl_acc: r.icl_acc,
            icl_loss: r.icl_loss,
            iwl_loss: r.iwl_loss,
            reference: if r.icl_loss > 0.0 && r.icl_loss < 1.0 {
                -0.5 * r.icl_loss.ln()
            } else {
                f64::NAN
            },
        })
        .collect();
    TransienceCurve {
        acquired: true,
        points,
    }
}

/// Fraction of runs whose final ICL accuracy exceeds `threshold`.
pub fn acquisition_probability(runs: &[RunRecord], threshold: f64) -> crate::Result<f64> {
    let finals: Vec<f64> = runs.iter().map(|r| r.final_icl_acc()).collect();
    acquisition_fraction(&finals, threshold)
}

pub fn acquisition_fraction(final_icl: &[f64], threshold: f64) -> crate::Result<f64> {
    crate::ensure!(
        !final_icl.is_empty(),
        Domain,
        "acquisition probability of an empty set of runs"
    );
    Ok(final_icl.iter().filter(|&&a| a > threshold).count() as f64 / final_icl.len() as f64)
}
