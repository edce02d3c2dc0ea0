use serde::{Deserialize, Serialize};

use crate::math::sigmoid;
use crate::{ensure, Result};

/// MLP logits on the +1-labelled items at one point in training.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitDistribution {
    samples: Vec<f64>,
    pub t: f64,
}

impl LogitDistribution {
    pub fn new(samples: Vec<f64>, t: f64) -> Result<Self> {
        ensure!(
            !samples.is_empty(),
            Domain,
            "logit distribution needs at least one sample"
        );
        ensure!(
            samples.iter().all(|v| v.is_finite()),
            Domain,
            "logit samples must be finite"
        );
        Ok(Self { samples, t })
    }

    /// Point mass at `phi`.
    pub fn constant(phi: f64) -> Self {
        Self {
            samples: vec![phi],
            t: 0.0,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn mean_of(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.samples.iter().map(|&p| f(p)).sum::<f64>() / self.samples.len() as f64
    }
}

/// `c₁ = ⟨σ(−φ⁺)⟩`, `c₂ = 1 − ⟨σ(−φ⁺)²⟩/c₁`, `c₃ = ⟨e^{−φ⁺}⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderParams {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub t: f64,
}

impl OrderParams {
    /// The value at an uninformative MLP (`φ⁺ ≡ 0`).
    pub fn chance() -> Self {
        Self {
            c1: 0.5,
            c2: 0.5,
            c3: 1.0,
            t: 0.0,
        }
    }
}

/// `c₂` is taken as 1 when `c₁` underflows to 0 (the fully memorized limit).
pub fn order_params_from_logits(dist: &LogitDistribution) -> OrderParams {
    let c1 = dist.mean_of(|p| sigmoid(-p));
    let s2 = dist.mean_of(|p| sigmoid(-p).powi(2));
    let c2 = if c1 > 0.0 { 1.0 - s2 / c1 } else { 1.0 };
    let c3 = dist.mean_of(|p| (-p).exp());
    OrderParams {
        c1,
        c2,
        c3,
        t: dist.t,
    }
}
