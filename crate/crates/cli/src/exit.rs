//! Process exit codes.

use std::fmt;

pub const SUCCESS: i32 = 0;
pub const FAILURE: i32 = 1;
pub const CONFIG: i32 = 2;
pub const PARTIAL: i32 = 3;
pub const DIVERGENCE: i32 = 4;

/// Bad flags or config contents.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Exit code for an error chain.
pub fn code_for(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<toml::de::Error>() {
            return CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<icl_core::Error>() {
            return match e {
                icl_core::Error::Config(_) => CONFIG,
                icl_core::Error::Divergence(_) => DIVERGENCE,
                _ => FAILURE,
            };
        }
    }
    FAILURE
}
