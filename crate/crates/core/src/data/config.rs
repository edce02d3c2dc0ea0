use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{ensure, Result};

/// Number of item/label pairs, or fresh items on every sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetSize {
    Finite(usize),
    Infinite,
}

impl DatasetSize {
    pub fn finite(self) -> Option<usize> {
        match self {
            Self::Finite(k) => Some(k),
            Self::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        self == Self::Infinite
    }
}

impl std::fmt::Display for DatasetSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Finite(k) => write!(f, "{k}"),
            Self::Infinite => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for DatasetSize {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinite" => Ok(Self::Infinite),
            other => other.parse::<usize>().map(Self::Finite).map_err(|_| {
                crate::Error::Config(format!(
                    "dataset size must be an integer or \"inf\", got {s:?}"
                ))
            }),
        }
    }
}

// `k = 1024` or `k = "inf"` in config files.
impl Serialize for DatasetSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Finite(k) => s.serialize_u64(*k as u64),
            Self::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for DatasetSize {
    fn deserialize<De: Deserializer<'de>>(d: De) -> std::result::Result<Self, De::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(k) => Ok(Self::Finite(k as usize)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Shape of the synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Item dimension.
    pub d: usize,
    pub k: DatasetSize,
    /// Context length.
    pub n: usize,
    #[serde(default)]
    pub balanced: bool,
    #[serde(default)]
    pub zipf_alpha: Option<f64>,
    /// Dataset seed; when absent the run seed is used.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl DataConfig {
    pub fn new(d: usize, k: DatasetSize, n: usize) -> Self {
        Self {
            d,
            k,
            n,
            balanced: false,
            zipf_alpha: None,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.d >= 1, Config, "item dimension must be at least 1");
        ensure!(
            self.n >= 2,
            Config,
            "context length must be at least 2, got {}",
            self.n
        );
        if let DatasetSize::Finite(k) = self.k {
            ensure!(k >= 1, Config, "dataset size must be at least 1");
        }
        ensure!(
            !self.balanced || self.n.is_multiple_of(2),
            Config,
            "balanced sequences need an even context length, got {}",
            self.n
        );
        if let Some(a) = self.zipf_alpha {
            ensure!(
                a.is_finite() && a > 0.0,
                Config,
                "zipf exponent must be positive, got {a}"
            );
            ensure!(
                !self.k.is_infinite(),
                Config,
                "zipf sampling needs a finite dataset"
            );
        }
        Ok(())
    }
}
