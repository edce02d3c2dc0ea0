//! Numerical laboratory for the memorization-to-generalization transition in
//! in-context learning.
//!
//! The crate is organised bottom-up:
//!
//! * [`math`]: special functions, Gauss–Hermite quadrature, RK4 and a
//!   counter-based random stream.
//! * [`autodiff`]: dense tensors, a reverse-mode tape and SGD with
//!   per-group weight decay.
//! * [`data`]: the item-label dataset, sequence builders and token encodings.
//! * [`models`]: the MLP, the two-parameter minimal model and the one-layer
//!   transformer.
//! * [`theory`]: loss expansions, order parameters, gradient-flow kinetics,
//!   scaling predictions and transience.
//! * [`experiments`]: training loops, detectors, sweeps and statistical fits.

pub mod autodiff;
pub mod data;
mod error;
pub mod experiments;
pub mod math;
pub mod models;
pub mod theory;

pub(crate) use error::ensure;
pub use error::{Error, Result};
