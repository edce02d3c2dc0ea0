use serde::{Deserialize, Serialize};

use crate::data::DataConfig;
use crate::models::ModelConfig;
use crate::{ensure, Result};

/// When a run may end before its iteration budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StopRule {
    /// Always run the full budget.
    #[default]
    Budget,
    /// Stop at the first evaluation with ICL accuracy at or above `icl`.
    IclAcquired { icl: f64 },
    /// Stop once `c₁` falls to `c1`, the point where memorization has
    /// removed the drive on the attention parameters.
    Memorized { c1: f64 },
    /// Whichever of the two above comes first.
    IclOrMemorized { icl: f64, c1: f64 },
}

/// One training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::batch")]
    pub batch: usize,
    pub iterations: usize,
    #[serde(default = "defaults::eval_interval")]
    pub eval_interval: usize,
    #[serde(default = "defaults::eval_batch")]
    pub eval_batch: usize,
    #[serde(default = "defaults::decay")]
    pub mlp_weight_decay: f64,
    /// λ on the attention parameters (`β, w` or `Q, K, V`).
    #[serde(default = "defaults::decay")]
    pub attention_weight_decay: f64,
    /// Cap on the number of +1 items used for `c₁, c₂, c₃`.
    #[serde(default = "defaults::order_param_items")]
    pub order_param_items: usize,
    #[serde(default)]
    pub stop: StopRule,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn lr() -> f64 {
        0.01
    }
    pub fn batch() -> usize {
        128
    }
    pub fn eval_interval() -> usize {
        100
    }
    pub fn eval_batch() -> usize {
        512
    }
    pub fn decay() -> f64 {
        1e-10
    }
    pub fn order_param_items() -> usize {
        20_000
    }
}

impl TrainConfig {
    pub fn new(model: ModelConfig, data: DataConfig, iterations: usize) -> Self {
        Self {
            model,
            data,
            lr: defaults::lr(),
            batch: defaults::batch(),
            iterations,
            eval_interval: defaults::eval_interval(),
            eval_batch: defaults::eval_batch(),
            mlp_weight_decay: defaults::decay(),
            attention_weight_decay: defaults::decay(),
            order_param_items: defaults::order_param_items(),
            stop: StopRule::Budget,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.data.validate()?;
        ensure!(
            self.model.d == self.data.d,
            Config,
            "model.d = {} but data.d = {}",
            self.model.d,
            self.data.d
        );
        ensure!(
            self.lr.is_finite() && self.lr > 0.0,
            Config,
            "lr must be positive"
        );
        ensure!(self.batch >= 1, Config, "batch must be positive");
        ensure!(
            self.iterations >= 1,
            Config,
            "iteration budget must be positive"
        );
        ensure!(
            self.eval_interval >= 1,
            Config,
            "eval_interval must be positive"
        );
        ensure!(self.eval_batch >= 1, Config, "eval_batch must be positive");
        ensure!(
            self.order_param_items >= 1,
            Config,
            "order_param_items must be positive"
        );
        ensure!(
            self.mlp_weight_decay >= 0.0 && self.attention_weight_decay >= 0.0,
            Config,
            "weight decay must be non-negative"
        );
        Ok(())
    }

    pub fn dataset_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.seed)
    }
}
