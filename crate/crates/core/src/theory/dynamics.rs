use serde::{Deserialize, Serialize};

use crate::math::{
    rk4_integrate_adaptive, upper_incomplete_gamma_half, AdaptiveStep, OdeTrajectory, StopReason,
};
use crate::{ensure, Result};

/// ICL logit margin that counts as acquisition (`σ(5) > 0.99`).
pub const DEFAULT_MARGIN: f64 = 5.0;

/// Time course of `c₁, c₂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CSeries {
    Constant {
        c1: f64,
        c2: f64,
    },
    /// Piecewise linear in `t`, held constant outside the sampled range.
    Sampled {
        t: Vec<f64>,
        c1: Vec<f64>,
        c2: Vec<f64>,
    },
}

impl Default for CSeries {
    fn default() -> Self {
        Self::Constant { c1: 0.5, c2: 0.5 }
    }
}

impl CSeries {
    pub fn validate(&self) -> Result<()> {
        if let Self::Sampled { t, c1, c2 } = self {
            ensure!(!t.is_empty(), Config, "c-series needs at least one sample");
            ensure!(
                t.len() == c1.len() && t.len() == c2.len(),
                Config,
                "c-series columns differ in length"
            );
            ensure!(
                t.windows(2).all(|w| w[1] > w[0]),
                Config,
                "c-series times must increase strictly"
            );
            ensure!(
                c1.iter().chain(c2).all(|v| v.is_finite() && *v >= 0.0),
                Config,
                "c-series values must be finite and non-negative"
            );
        }
        Ok(())
    }

    /// `(c₁(t), c₂(t))`.
    pub fn at(&self, time: f64) -> (f64, f64) {
        match self {
            Self::Constant { c1, c2 } => (*c1, *c2),
            Self::Sampled { t, c1, c2 } => {
                let i = t.partition_point(|&s| s <= time);
                if i == 0 {
                    (c1[0], c2[0])
                } else if i == t.len() {
                    (c1[i - 1], c2[i - 1])
                } else {
                    let f = (time - t[i - 1]) / (t[i] - t[i - 1]);
                    (
                        c1[i - 1] + f * (c1[i] - c1[i - 1]),
                        c2[i - 1] + f * (c2[i] - c2[i - 1]),
                    )
                }
            }
        }
    }
}

/// Inputs of the `(w, β)` gradient-flow model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    pub n: usize,
    pub beta0: f64,
    #[serde(default)]
    pub w0: f64,
    /// L2 coefficient on `w`.
    #[serde(default)]
    pub lambda_w: f64,
    #[serde(default)]
    pub c_series: CSeries,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    /// Keep the `−c₂w` restoring term in `dw/dt`.
    #[serde(default = "default_true")]
    pub w_damping: bool,
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

fn default_t_max() -> f64 {
    1e10
}

fn default_true() -> bool {
    true
}

impl TheoryConfig {
    pub fn new(n: usize, beta0: f64) -> Self {
        Self {
            n,
            beta0,
            w0: 0.0,
            lambda_w: 0.0,
            c_series: CSeries::default(),
            margin: DEFAULT_MARGIN,
            t_max: default_t_max(),
            w_damping: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.n >= 2,
            Config,
            "context length must be at least 2, got {}",
            self.n
        );
        ensure!(
            self.lambda_w >= 0.0,
            Config,
            "lambda_w must be non-negative"
        );
        ensure!(
            self.beta0.is_finite() && self.w0.is_finite(),
            Config,
            "initial conditions must be finite"
        );
        ensure!(self.margin > 0.0, Config, "margin must be positive");
        ensure!(self.t_max > 0.0, Config, "t_max must be positive");
        self.c_series.validate()
    }
}

/// `(dw/dt, dβ/dt) = ((c₁/N)(e^β − c₂w) − λ_w w, (c₁/N) w e^β)`.
pub fn ode_rhs(w: f64, beta: f64, c1: f64, c2: f64, n: usize, lambda_w: f64) -> (f64, f64) {
    let k = c1 / n as f64;
    let eb = beta.exp();
    (k * (eb - c2 * w) - lambda_w * w, k * w * eb)
}

/// ICL logit margin `w(e^β − 1)/(e^β + N − 1)` of the target over a distractor.
pub fn icl_margin(w: f64, beta: f64, n: usize) -> f64 {
    let eb = beta.exp();
    if eb.is_infinite() {
        return w;
    }
    w * (eb - 1.0) / (eb + n as f64 - 1.0)
}

/// `N√2·Γ(1/2, w₀²/2)·e^{−β₀ + w₀²/2}`, in units of `I_K`.
pub fn t_icl_small_beta(n: usize, beta0: f64, w0: f64) -> Result<f64> {
    let x = w0 * w0 / 2.0;
    Ok(n as f64 * 2f64.sqrt() * upper_incomplete_gamma_half(x)? * (-beta0 + x).exp())
}

/// `N·e^{−2β₀}`, in units of `I′_K`.
pub fn t_icl_large_negative_beta(n: usize, beta0: f64) -> f64 {
    n as f64 * (-2.0 * beta0).exp()
}

/// Which closed form describes the initial condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `|β₀| ≤ 1`.
    SmallBeta,
    /// `β₀ ≤ −2`.
    LargeNegativeBeta,
    Intermediate,
}

impl Regime {
    pub fn of(beta0: f64) -> Self {
        if beta0.abs() <= 1.0 {
            Self::SmallBeta
        } else if beta0 <= -2.0 {
            Self::LargeNegativeBeta
        } else {
            Self::Intermediate
        }
    }
}

/// Acquisition time from the ODE, alongside both closed forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    /// First time the margin reaches `m*`; `None` when not acquired by `t_max`.
    pub t_icl: Option<f64>,
    pub t_icl_small_beta: f64,
    pub t_icl_large_negative_beta: f64,
    /// `I_K = 2∫c₁` at the crossing.
    pub i_k_at_crossing: Option<f64>,
    /// `I′_K = ∫c₁/c₂` at the crossing.
    pub i_prime_k_at_crossing: Option<f64>,
    pub regime: Regime,
    pub stop: StopReason,
    pub final_w: f64,
    pub final_beta: f64,
}

impl PredictionResult {
    pub fn acquired(&self) -> bool {
        self.t_icl.is_some()
    }
}

/// RK4 solution with state `[w, β, I_K, I′_K]`.
pub fn integrate_trajectory(config: &TheoryConfig) -> Result<OdeTrajectory> {
    config.validate()?;
    let n = config.n;
    let series = &config.c_series;
    let (lambda, damping, m) = (config.lambda_w, config.w_damping, config.margin);
    let field = |t: f64, y: &[f64], dy: &mut [f64]| {
        let (c1, c2) = series.at(t);
        let (dw, db) = ode_rhs(y[0], y[1], c1, if damping { c2 } else { 0.0 }, n, lambda);
        dy[0] = dw;
        dy[1] = db;
        dy[2] = 2.0 * c1;
        dy[3] = if c2 > 0.0 { c1 / c2 } else { 0.0 };
    };
    let stop = |_t: f64, y: &[f64]| icl_margin(y[0], y[1], n) >= m;
    let control = AdaptiveStep {
        initial_dt: 1e-3,
        ..AdaptiveStep::default()
    };
    rk4_integrate_adaptive(
        field,
        &[config.w0, config.beta0, 0.0, 0.0],
        control,
        stop,
        config.t_max,
    )
}

pub fn integrate_dynamics(config: &TheoryConfig) -> Result<PredictionResult> {
    let traj = integrate_trajectory(config)?;
    let n = config.n;
    let last = traj.last_state().to_vec();
    let (mut t_icl, mut ik, mut ipk) = (None, None, None);
    if traj.stop == StopReason::ConditionMet {
        let k = traj.times.len();
        if k == 1 {
            (t_icl, ik, ipk) = (Some(0.0), Some(0.0), Some(0.0));
        } else {
            // Linear interpolation of the crossing inside the last step.
            let (a, b) = (&traj.states[k - 2], &traj.states[k - 1]);
            let (ma, mb) = (icl_margin(a[0], a[1], n), icl_margin(b[0], b[1], n));
            let f = if mb > ma {
                ((config.margin - ma) / (mb - ma)).clamp(0.0, 1.0)
            } else {
                1.0
            };
            let lerp = |x: f64, y: f64| x + f * (y - x);
            t_icl = Some(lerp(traj.times[k - 2], traj.times[k - 1]));
            ik = Some(lerp(a[2], b[2]));
            ipk = Some(lerp(a[3], b[3]));
        }
    }
    Ok(PredictionResult {
        t_icl,
        t_icl_small_beta: t_icl_small_beta(n, config.beta0, config.w0)?,
        t_icl_large_negative_beta: t_icl_large_negative_beta(n, config.beta0),
        i_k_at_crossing: ik,
        i_prime_k_at_crossing: ipk,
        regime: Regime::of(config.beta0),
        stop: traj.stop,
        final_w: last[0],
        final_beta: last[1],
    })
}
