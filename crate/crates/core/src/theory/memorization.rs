use serde::{Deserialize, Serialize};

use crate::{ensure, Result};

/// Limit of `I_K(t)` as `t → ∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum IkLimit {
    Finite(f64),
    /// `c₁` does not decay fast enough for the integral to converge.
    Divergent,
}

impl IkLimit {
    pub fn value(self) -> Option<f64> {
        match self {
            Self::Finite(v) => Some(v),
            Self::Divergent => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkResult {
    /// Cumulative `2∫c₁`, one entry per input sample.
    pub series: Vec<f64>,
    pub limit: IkLimit,
    /// Extrapolated tail added to the last cumulative value.
    pub tail: f64,
}

fn cumulative_trapezoid(y: &[f64], dt: f64, scale: f64) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(y.len());
    out.push(0.0);
    for w in y.windows(2) {
        acc += scale * 0.5 * dt * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / sxx
}

/// `I_K(t) = 2∫₀ᵗ c₁` by the trapezoid rule on samples spaced `dt` apart,
/// and its limit.
///
/// The limit adds an exponential tail fitted to the final decade of time
/// when the last sample is above `1e-8`. The integral is reported as
/// divergent when the last sample exceeds 1% of the first, or when the
/// final decade decays no faster than `1/t`.
pub fn i_k_from_c1(c1: &[f64], dt: f64) -> Result<IkResult> {
    ensure!(c1.len() >= 2, Domain, "need at least two c1 samples");
    ensure!(
        dt > 0.0 && dt.is_finite(),
        Domain,
        "sample spacing must be positive"
    );
    ensure!(
        c1.iter().all(|v| v.is_finite() && *v >= 0.0),
        Domain,
        "c1 samples must be finite and non-negative"
    );
    let series = cumulative_trapezoid(c1, dt, 2.0);
    let last = *c1.last().unwrap();
    let end = *series.last().unwrap();
    if last <= 1e-8 {
        return Ok(IkResult {
            series,
            limit: IkLimit::Finite(end),
            tail: 0.0,
        });
    }
    if last > 0.01 * c1[0] {
        return Ok(IkResult {
            series,
            limit: IkLimit::Divergent,
            tail: f64::INFINITY,
        });
    }
    let n = c1.len();
    let t_end = (n - 1) as f64 * dt;
    let mut start = c1
        .iter()
        .enumerate()
        .position(|(i, _)| i as f64 * dt >= t_end / 10.0)
        .unwrap_or(0);
    start = start.min(n.saturating_sub(3)).max(1);
    let idx: Vec<usize> = (start..n).filter(|&i| c1[i] > 0.0).collect();
    if idx.len() < 2 {
        return Ok(IkResult {
            series,
            limit: IkLimit::Finite(end),
            tail: 0.0,
        });
    }
    let ts: Vec<f64> = idx.iter().map(|&i| i as f64 * dt).collect();
    let logc: Vec<f64> = idx.iter().map(|&i| c1[i].ln()).collect();
    let loglog = least_squares_slope(&ts.iter().map(|t| t.ln()).collect::<Vec<_>>(), &logc);
    let rate = -least_squares_slope(&ts, &logc);
    if loglog >= -1.0 || rate <= 0.0 {
        return Ok(IkResult {
            series,
            limit: IkLimit::Divergent,
            tail: f64::INFINITY,
        });
    }
    let tail = 2.0 * last / rate;
    Ok(IkResult {
        series,
        limit: IkLimit::Finite(end + tail),
        tail,
    })
}

/// `I′_K(t) = ∫₀ᵗ c₁/c₂`, cumulative on samples spaced `dt` apart.
pub fn i_prime_k(c1: &[f64], c2: &[f64], dt: f64) -> Result<Vec<f64>> {
    ensure!(
        c1.len() == c2.len() && !c1.is_empty(),
        Domain,
        "c1 and c2 series must have equal, non-zero length"
    );
    ensure!(c2.iter().all(|v| *v > 0.0), Domain, "c2 must be positive");
    let ratio: Vec<f64> = c1.iter().zip(c2).map(|(a, b)| a / b).collect();
    Ok(cumulative_trapezoid(&ratio, dt, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Generalizes,
    Memorizes,
    /// Memorization never completes, so ICL always wins eventually.
    CapacityConstrained,
}

impl Criterion {
    pub fn generalizes(self) -> bool {
        self != Self::Memorizes
    }
}

/// ICL is acquired when the required `I_K` is below `I_K(∞)`.
pub fn criterion_generalize(t_icl: f64, ik: IkLimit) -> Criterion {
    match ik {
        IkLimit::Divergent => Criterion::CapacityConstrained,
        IkLimit::Finite(v) if t_icl < v => Criterion::Generalizes,
        IkLimit::Finite(_) => Criterion::Memorizes,
    }
}

/// Power law `y = e^{log_prefactor} x^{exponent}` fitted in log-log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub exponent: f64,
    pub log_prefactor: f64,
    /// Root-mean-square log residual.
    pub residual: f64,
    pub r_squared: f64,
    /// SHA-256 of the input points.
    pub inputs_hash: String,
}

impl ScalingFit {
    pub fn predict(&self, x: f64) -> f64 {
        (self.log_prefactor + self.exponent * x.ln()).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KStarPrediction {
    /// `1/ν`.
    pub exponent: f64,
    /// Calibrated prefactor `C`.
    pub prefactor: Option<f64>,
    pub k_star: Option<f64>,
}

/// `K*(N) = C·N^{1/ν}·e^{−β₀/ν}`, with `C` fixed by one measured `(N, K*)`.
pub fn predict_k_star(
    n: f64,
    nu: f64,
    beta0: f64,
    calibration: Option<(f64, f64)>,
) -> Result<KStarPrediction> {
    ensure!(
        nu > 0.0 && nu.is_finite(),
        Domain,
        "nu must be positive, got {nu}"
    );
    ensure!(n > 0.0, Domain, "context length must be positive");
    let shape = |n: f64| (n.ln() / nu - beta0 / nu).exp();
    let exponent = 1.0 / nu;
    match calibration {
        None => Ok(KStarPrediction {
            exponent,
            prefactor: None,
            k_star: None,
        }),
        Some((nc, kc)) => {
            ensure!(
                nc > 0.0 && kc > 0.0,
                Domain,
                "calibration point must be positive"
            );
            let c = kc / shape(nc);
            Ok(KStarPrediction {
                exponent,
                prefactor: Some(c),
                k_star: Some(c * shape(n)),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_c1_gives_identity() {
        let c1 = vec![0.5; 101];
        let r = i_k_from_c1(&c1, 0.1).unwrap();
        for (i, v) in r.series.iter().enumerate() {
            assert!((v - 0.1 * i as f64).abs() < 1e-12);
        }
        assert_eq!(r.limit, IkLimit::Divergent);
    }

    #[test]
    fn exponential_decay_integrates_to_one() {
        let dt = 0.01;
        let c1: Vec<f64> = (0..=4000).map(|i| 0.5 * (-(i as f64) * dt).exp()).collect();
        let r = i_k_from_c1(&c1, dt).unwrap();
        assert!((r.limit.value().unwrap() - 1.0).abs() < 1e-4);
        // Truncated early: the fitted tail recovers the remainder.
        let r = i_k_from_c1(&c1[..1001], dt).unwrap();
        assert!(r.tail > 0.0);
        assert!(
            (r.limit.value().unwrap() - 1.0).abs() < 1e-4,
            "{:?}",
            r.limit
        );
    }

    #[test]
    fn harmonic_tail_is_divergent() {
        let dt = 0.1;
        let c1: Vec<f64> = (0..=100_000).map(|i| 0.5 / (1.0 + i as f64 * dt)).collect();
        assert_eq!(i_k_from_c1(&c1, dt).unwrap().limit, IkLimit::Divergent);
        let short: Vec<f64> = (0..=100).map(|i| 0.5 / (1.0 + i as f64 * dt)).collect();
        assert_eq!(i_k_from_c1(&short, dt).unwrap().limit, IkLimit::Divergent);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(i_k_from_c1(&[0.5], 1.0).is_err());
        assert!(i_k_from_c1(&[0.5, -0.1], 1.0).is_err());
        assert!(i_k_from_c1(&[0.5, 0.4], 0.0).is_err());
    }

    #[test]
    fn prime_integral() {
        let v = i_prime_k(&[0.5, 0.5, 0.5], &[0.5, 0.5, 0.5], 2.0).unwrap();
        assert_eq!(v, vec![0.0, 2.0, 4.0]);
    }

    #[test]
    fn criterion_cases() {
        assert_eq!(
            criterion_generalize(100.0, IkLimit::Finite(200.0)),
            Criterion::Generalizes
        );
        assert_eq!(
            criterion_generalize(300.0, IkLimit::Finite(200.0)),
            Criterion::Memorizes
        );
        let c = criterion_generalize(1e9, IkLimit::Divergent);
        assert_eq!(c, Criterion::CapacityConstrained);
        assert!(c.generalizes());
    }

    #[test]
    fn k_star_scaling() {
        let p = predict_k_star(100.0, 0.7, 0.0, None).unwrap();
        assert!((p.exponent - 1.0 / 0.7).abs() < 1e-15);
        assert!((p.exponent - 1.43).abs() < 0.01);
        assert!(p.k_star.is_none());
        let a = predict_k_star(100.0, 0.7, 0.0, Some((100.0, 1e4))).unwrap();
        assert!((a.k_star.unwrap() - 1e4).abs() < 1e-8);
        let b = predict_k_star(200.0, 0.7, 0.0, Some((100.0, 1e4))).unwrap();
        assert!((b.k_star.unwrap() / a.k_star.unwrap() - 2f64.powf(1.0 / 0.7)).abs() < 1e-12);
        let c = predict_k_star(100.0, 0.7, -0.7, Some((100.0, 1e4))).unwrap();
        assert!((c.k_star.unwrap() - 1e4).abs() < 1e-8);
        assert!(predict_k_star(100.0, 0.0, 0.0, None).is_err());
    }
}
