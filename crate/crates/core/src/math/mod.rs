//! Numerical building blocks shared by every other module.

pub mod ode;
pub mod quadrature;
pub mod rng;
pub mod special;

pub use ode::{rk4_integrate, rk4_integrate_adaptive, AdaptiveStep, OdeTrajectory, StopReason};
pub use quadrature::{gauss_hermite_expectation, QuadratureRule, DEFAULT_HERMITE_ORDER};
pub use rng::RngStream;
pub use special::{
    erfc, lambert_w0, log_sigmoid, normal_cdf, normal_pdf, sigmoid, stable_log_sigmoid,
    upper_incomplete_gamma_half,
};
