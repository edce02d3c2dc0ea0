use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::record::hex_digest;
use crate::math::{erfc, sigmoid};
use crate::theory::ScalingFit;
use crate::{ensure, Result};

/// `acc(K) = a + (b − a) σ((ln K − ln K*)/s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidFit {
    pub k_star: f64,
    pub low: f64,
    pub high: f64,
    /// Width in `ln K`.
    pub width: f64,
    /// Root-mean-square residual.
    pub residual: f64,
}

impl SigmoidFit {
    pub fn predict(&self, k: f64) -> f64 {
        self.low + (self.high - self.low) * sigmoid((k.ln() - self.k_star.ln()) / self.width)
    }
}

const MIN_LOG_WIDTH: f64 = -6.0;
const MAX_LOG_WIDTH: f64 = 3.0;

/// For fixed midpoint and width the levels are linear least squares.
/// Returns `(sse, a, b)`.
fn profile(x: &[f64], y: &[f64], m: f64, log_s: f64) -> (f64, f64, f64) {
    let s = log_s.exp();
    let (mut s00, mut s01, mut s11, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let g = sigmoid((xi - m) / s);
        let h = 1.0 - g;
        s00 += h * h;
        s01 += h * g;
        s11 += g * g;
        r0 += h * yi;
        r1 += g * yi;
    }
    let det = s00 * s11 - s01 * s01;
    let (a, b) = if det.abs() > 1e-12 * (s00 * s11).max(1e-300) {
        ((r0 * s11 - r1 * s01) / det, (r1 * s00 - r0 * s01) / det)
    } else {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        (mean, mean)
    };
    let sse = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| (yi - a - (b - a) * sigmoid((xi - m) / s)).powi(2))
        .sum();
    (sse, a, b)
}

/// Least-squares sigmoid in `ln K`; `points` are `(K, final ICL accuracy)`.
///
/// The midpoint and width are found by a grid search followed by pattern
/// search, with the levels solved exactly at each trial. When the best
/// width hits the sharp-step limit the midpoint is not identified by the
/// data, and the geometric midpoint of the bracketing K values is reported.
pub fn fit_sigmoid_k_star(points: &[(f64, f64)]) -> Result<SigmoidFit> {
    ensure!(
        points.len() >= 4,
        Fit,
        "sigmoid fit needs at least 4 points, got {}",
        points.len()
    );
    ensure!(
        points
            .iter()
            .all(|(k, a)| *k > 0.0 && k.is_finite() && a.is_finite()),
        Domain,
        "K must be positive and accuracies finite"
    );
    let mut pts = points.to_vec();
    pts.sort_by(|p, q| p.0.total_cmp(&q.0));
    let x: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (ymin, ymax) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
    ensure!(
        ymax - ymin > 1e-9,
        Fit,
        "all accuracies are equal; no transition to fit"
    );
    let (x0, x1) = (x[0], x[x.len() - 1]);
    ensure!(x1 > x0, Fit, "need at least two distinct K values");

    let span = x1 - x0;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=200 {
        let m = x0 + span * i as f64 / 200.0;
        for j in 0..=45 {
            let ls = MIN_LOG_WIDTH + (MAX_LOG_WIDTH - MIN_LOG_WIDTH) * j as f64 / 45.0;
            let sse = profile(&x, &y, m, ls).0;
            if sse < best.0 {
                best = (sse, m, ls);
            }
        }
    }
    let (mut sse, mut m, mut ls) = best;
    let mut step = (span / 200.0, (MAX_LOG_WIDTH - MIN_LOG_WIDTH) / 45.0);
    while step.0 > 1e-10 * span.max(1.0) {
        let mut improved = false;
        for (dm, dl) in [(step.0, 0.0), (-step.0, 0.0), (0.0, step.1), (0.0, -step.1)] {
            let (tm, tl) = (
                (m + dm).clamp(x0, x1),
                (ls + dl).clamp(MIN_LOG_WIDTH, MAX_LOG_WIDTH),
            );
            let s = profile(&x, &y, tm, tl).0;
            if s < sse {
                (sse, m, ls, improved) = (s, tm, tl, true);
            }
        }
        if !improved {
            step = (step.0 / 2.0, step.1 / 2.0);
        }
    }
    if ls <= MIN_LOG_WIDTH + 1e-9 {
        let hi = x.iter().position(|v| *v > m).unwrap_or(x.len() - 1);
        let lo = hi.saturating_sub(1);
        m = 0.5 * (x[lo] + x[hi]);
        sse = profile(&x, &y, m, ls).0;
    }
    let (_, a, b) = profile(&x, &y, m, ls);
    Ok(SigmoidFit {
        k_star: m.exp(),
        low: a,
        high: b,
        width: ls.exp(),
        residual: (sse / x.len() as f64).sqrt(),
    })
}

/// Ordinary least squares `y = slope x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_linear(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    ensure!(
        x.len() == y.len(),
        Shape,
        "x has {} values, y has {}",
        x.len(),
        y.len()
    );
    ensure!(x.len() >= 2, Fit, "linear fit needs at least two points");
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    ensure!(sxx > 0.0, Fit, "x values are all equal");
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// `y = C x^ν` by least squares on `(ln x, ln y)`.
pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<ScalingFit> {
    ensure!(
        x.len() == y.len(),
        Shape,
        "x has {} values, y has {}",
        x.len(),
        y.len()
    );
    ensure!(
        x.iter().chain(y).all(|v| *v > 0.0 && v.is_finite()),
        Domain,
        "power-law fit needs positive finite values"
    );
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let lin = fit_linear(&lx, &ly)?;
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(a, b)| (b - lin.intercept - lin.slope * a).powi(2))
        .sum();
    let mut h = Sha256::new();
    for (a, b) in x.iter().zip(y) {
        h.update(a.to_le_bytes());
        h.update(b.to_le_bytes());
    }
    Ok(ScalingFit {
        exponent: lin.slope,
        log_prefactor: lin.intercept,
        residual: (ss_res / x.len() as f64).sqrt(),
        r_squared: lin.r_squared,
        inputs_hash: hex_digest(&h.finalize()),
    })
}

/// Fixed histogram over `[0, 1]` plus the fraction strictly inside `(0.6, 0.9)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bimodality {
    pub fraction_intermediate: f64,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub const INTERMEDIATE_BAND: (f64, f64) = (0.6, 0.9);

pub fn bimodality_stat(final_accuracies: &[f64]) -> Bimodality {
    let edges: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let mut counts = vec![0; 10];
    for &a in final_accuracies {
        let bin = ((a * 10.0).floor().max(0.0) as usize).min(9);
        counts[bin] += 1;
    }
    let (lo, hi) = INTERMEDIATE_BAND;
    let mid = final_accuracies
        .iter()
        .filter(|&&a| a > lo && a < hi)
        .count();
    let fraction_intermediate = if final_accuracies.is_empty() {
        0.0
    } else {
        mid as f64 / final_accuracies.len() as f64
    };
    Bimodality {
        fraction_intermediate,
        edges,
        counts,
    }
}

/// One-sided pooled z-test of `p₁ > p₂`. Returns `(z, p-value)`.
pub fn two_proportion_z_test(
    success1: usize,
    n1: usize,
    success2: usize,
    n2: usize,
) -> Result<(f64, f64)> {
    ensure!(
        n1 > 0 && n2 > 0,
        Domain,
        "both groups need at least one trial"
    );
    ensure!(
        success1 <= n1 && success2 <= n2,
        Domain,
        "successes exceed trials"
    );
    let (p1, p2) = (success1 as f64 / n1 as f64, success2 as f64 / n2 as f64);
    let pooled = (success1 + success2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    if se == 0.0 {
        return Ok((0.0, 1.0));
    }
    let z = (p1 - p2) / se;
    Ok((z, 0.5 * erfc(z / std::f64::consts::SQRT_2)))
}

/// Linear-interpolation quantile of unsorted data, `q ∈ [0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    ensure!(!values.is_empty(), Domain, "quantile of an empty sample");
    ensure!(
        (0.0..=1.0).contains(&q),
        Domain,
        "quantile level {q} outside [0, 1]"
    );
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    Ok(if i + 1 < v.len() {
        v[i] + frac * (v[i + 1] - v[i])
    } else {
        v[i]
    })
}

/// `(q90 − q50) / (q50 − q10)`; above 1 for a right-skewed sample.
pub fn tail_ratio(values: &[f64]) -> Result<f64> {
    let (q10, q50, q90) = (
        quantile(values, 0.1)?,
        quantile(values, 0.5)?,
        quantile(values, 0.9)?,
    );
    ensure!(q50 > q10, Fit, "lower half of the sample has zero spread");
    Ok((q90 - q50) / (q50 - q10))
}
