//! Closed-form and ODE-level theory of the minimal model: loss surfaces,
//! order parameters, acquisition-time predictions, memorization integrals,
//! the task-diversity threshold and transience.

mod dynamics;
mod loss;
mod memorization;
mod order;
mod transience;

pub use dynamics::{
    icl_margin, integrate_dynamics, integrate_trajectory, ode_rhs, t_icl_large_negative_beta,
    t_icl_small_beta, CSeries, PredictionResult, Regime, TheoryConfig, DEFAULT_MARGIN,
};
pub use loss::{
    balanced_loss, balanced_loss_grad, early_loss, early_loss_grad, full_loss, loss_surface,
    mlp_term, SurfacePoint,
};
pub use memorization::{
    criterion_generalize, i_k_from_c1, i_prime_k, predict_k_star, Criterion, IkLimit, IkResult,
    KStarPrediction, ScalingFit,
};
pub use order::{order_params_from_logits, LogitDistribution, OrderParams};
pub use transience::{
    icl_iwl_relation, transience_loss, transience_loss_grad, w_transient, RelationDirection,
    Transience,
};
