use serde::Serialize;

use super::order::{LogitDistribution, OrderParams};
use crate::math::{log_sigmoid, QuadratureRule};
use crate::{ensure, Result};

/// `⟨log(1 + e^{−φ⁺})⟩`.
pub fn mlp_term(dist: &LogitDistribution) -> f64 {
    dist.mean_of(|p| -log_sigmoid(p))
}

/// Population loss of the minimal model with Gaussian label-count
/// fluctuations: Gauss–Hermite over `η`, sample mean over `φ⁺`.
pub fn full_loss(
    dist: &LogitDistribution,
    w: f64,
    beta: f64,
    n: usize,
    rule: &QuadratureRule,
) -> Result<f64> {
    ensure!(n >= 2, Domain, "context length must be at least 2, got {n}");
    let nf = n as f64;
    let eb = beta.exp();
    let denom = eb + nf - 1.0;
    let bias = w * (eb - 1.0) / denom;
    let slope = w * nf.sqrt() / denom;
    let rs = nf.sqrt();
    Ok(rule.expectation(|eta| {
        let weight = 1.0 + eta / rs;
        let shift = bias + slope * eta;
        -weight * dist.mean_of(|p| log_sigmoid(p + shift))
    }))
}

fn outside_expansion(w: f64, beta: f64, n: usize) -> bool {
    let nf = n as f64;
    w.abs() > 0.3 * nf.sqrt() || (beta.exp() - 1.0).abs() > 0.3 * nf
}

fn warn_outside_expansion(w: f64, beta: f64, n: usize) {
    if outside_expansion(w, beta, n) {
        log::warn!(
            "(w = {w}, beta = {beta}) is outside the small-w, small-beta expansion at N = {n}"
        );
    }
}

/// Quadratic small-`w` expansion of [`full_loss`].
pub fn early_loss(p: &OrderParams, mlp_term: f64, w: f64, beta: f64, n: usize) -> f64 {
    warn_outside_expansion(w, beta, n);
    early_loss_unchecked(p, mlp_term, w, beta, n)
}

fn early_loss_unchecked(p: &OrderParams, mlp_term: f64, w: f64, beta: f64, n: usize) -> f64 {
    mlp_term - p.c1 / n as f64 * (beta.exp() * w - p.c2 * w * w / 2.0)
}

/// `(∂L/∂w, ∂L/∂β)` of [`early_loss`].
pub fn early_loss_grad(p: &OrderParams, w: f64, beta: f64, n: usize) -> (f64, f64) {
    let k = p.c1 / n as f64;
    let eb = beta.exp();
    (-k * (eb - p.c2 * w), -k * eb * w)
}

/// Expansion at `η = 0`, i.e. exactly `N/2` labels of each sign.
pub fn balanced_loss(p: &OrderParams, mlp_term: f64, w: f64, beta: f64, n: usize) -> f64 {
    warn_outside_expansion(w, beta, n);
    balanced_loss_unchecked(p, mlp_term, w, beta, n)
}

fn balanced_loss_unchecked(p: &OrderParams, mlp_term: f64, w: f64, beta: f64, n: usize) -> f64 {
    mlp_term - p.c1 / n as f64 * w * beta.exp_m1()
}

/// `(∂L′/∂w, ∂L′/∂β)` of [`balanced_loss`].
pub fn balanced_loss_grad(p: &OrderParams, w: f64, beta: f64, n: usize) -> (f64, f64) {
    let k = p.c1 / n as f64;
    (-k * beta.exp_m1(), -k * w * beta.exp())
}

/// One `(w, β)` grid point of the three loss surfaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurfacePoint {
    pub w: f64,
    pub beta: f64,
    pub full: f64,
    pub early: f64,
    pub balanced: f64,
}

pub fn loss_surface(
    dist: &LogitDistribution,
    ws: &[f64],
    betas: &[f64],
    n: usize,
    rule: &QuadratureRule,
) -> Result<Vec<SurfacePoint>> {
    let p = super::order_params_from_logits(dist);
    let m = mlp_term(dist);
    let mut out = Vec::with_capacity(ws.len() * betas.len());
    let mut outside = 0;
    for &beta in betas {
        for &w in ws {
            outside += usize::from(outside_expansion(w, beta, n));
            out.push(SurfacePoint {
                w,
                beta,
                full: full_loss(dist, w, beta, n, rule)?,
                early: early_loss_unchecked(&p, m, w, beta, n),
                balanced: balanced_loss_unchecked(&p, m, w, beta, n),
            });
        }
    }
    if outside > 0 {
        log::warn!("{outside} of {} surface points lie outside the small-w, small-beta expansion at N = {n}", out.len());
    }
    Ok(out)
}
