//! Training loops, metric records, detectors, sweeps and statistical fits.

mod config;
mod detect;
mod fits;
mod record;
mod scaling;
mod sweep;
mod train;

pub use config::{StopRule, TrainConfig};
pub use detect::{
    acquisition_fraction, acquisition_probability, detect_t_icl, detect_transience,
    transience_curve, TransienceCurve, TransiencePoint, T_ICL_THRESHOLD,
};
pub use fits::{
    bimodality_stat, fit_linear, fit_power_law, fit_sigmoid_k_star, quantile, tail_ratio,
    two_proportion_z_test, Bimodality, LinearFit, SigmoidFit, INTERMEDIATE_BAND,
};
pub use record::{hex_digest, EvalRow, Manifest, RunRecord, RunStop};
pub use scaling::{
    i_k_from_record, measure_memorization_scaling, MemorizationPoint, MemorizationScaling,
};
pub use sweep::{
    sweep, sweep_with, CellOutcome, CellSummary, SweepCell, SweepCsvRow, SweepGrid, SweepResult,
    SweepStatus,
};
pub use train::{
    accuracy, bce, parameter_hash, streams, train, train_timed, train_with_model, Trainer,
};
