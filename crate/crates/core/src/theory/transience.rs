use serde::{Deserialize, Serialize};

use crate::math::lambert_w0;
use crate::{ensure, Result};

/// Late-time loss `c₃ e^{−w} + λ w²/2`.
pub fn transience_loss(c3: f64, w: f64, lambda_w: f64) -> f64 {
    c3 * (-w).exp() + lambda_w * w * w / 2.0
}

pub fn transience_loss_grad(c3: f64, w: f64, lambda_w: f64) -> f64 {
    -c3 * (-w).exp() + lambda_w * w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "w", rename_all = "snake_case")]
pub enum Transience {
    /// Fixed point `w_tr = W(c₃/λ)`.
    Steady(f64),
    /// Without regularization `w` grows without bound.
    NoTransience,
}

pub fn w_transient(c3: f64, lambda_w: f64) -> Result<Transience> {
    ensure!(
        c3 >= 0.0 && c3.is_finite(),
        Domain,
        "c3 must be finite and non-negative"
    );
    ensure!(lambda_w >= 0.0, Domain, "lambda_w must be non-negative");
    if lambda_w == 0.0 {
        return Ok(Transience::NoTransience);
    }
    Ok(Transience::Steady(lambert_w0(c3 / lambda_w)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationDirection {
    FromIcl,
    FromIwl,
}

/// Small-loss duality between ICL and IWL losses.
///
/// With the ICL logit `w` large, `L_ICL ≈ e^{−w}` and `L_IWL ≈ w/2`; with
/// a typical MLP logit magnitude `ξ`, `L_IWL ≈ e^{−ξ}` and `L_ICL ≈ ξ/2`.
/// Both directions are `−½ log L`.
pub fn icl_iwl_relation(loss: f64, direction: RelationDirection) -> Result<f64> {
    let _ = direction;
    ensure!(
        loss > 0.0 && loss < 1.0,
        Regime,
        "the relation holds only for losses in (0, 1), got {loss}"
    );
    Ok(-0.5 * loss.ln())
}
