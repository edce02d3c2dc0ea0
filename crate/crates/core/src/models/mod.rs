//! The three model families: MLP only, the minimal two-scalar attention
//! model, and the one-layer transformer.

mod checkpoint;
mod minimal;
mod mlp;
mod transformer;

pub use checkpoint::{config_hash, load_checkpoint, save_checkpoint};
pub use minimal::{attention_logit, similarity_scores, MinimalModel};
pub use mlp::MlpModel;
pub use transformer::{ablate_kqv, TransformerModel};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Param, ParamGroup};
use crate::data::SequenceBatch;
use crate::math::RngStream;
use crate::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    MlpOnly,
    Minimal,
    Transformer,
}

/// Architecture and initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Item dimension.
    pub d: usize,
    /// MLP hidden width.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Std of the Gaussian draw for β and w.
    #[serde(default = "default_init_std")]
    pub attention_init_std: f64,
    /// Fixed β₀, overriding the random draw.
    #[serde(default)]
    pub beta0: Option<f64>,
    /// Fixed w₀, overriding the random draw.
    #[serde(default)]
    pub w0: Option<f64>,
}

fn default_hidden() -> usize {
    512
}

fn default_init_std() -> f64 {
    0.01
}

impl ModelConfig {
    pub fn new(kind: ModelKind, d: usize, hidden: usize) -> Self {
        Self {
            kind,
            d,
            hidden,
            attention_init_std: default_init_std(),
            beta0: None,
            w0: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.d >= 1, Config, "item dimension must be positive");
        ensure!(self.hidden >= 1, Config, "hidden width must be positive");
        ensure!(
            self.attention_init_std >= 0.0,
            Config,
            "init std must be non-negative"
        );
        for v in [self.beta0, self.w0].into_iter().flatten() {
            ensure!(
                v.is_finite(),
                Config,
                "initial attention parameters must be finite"
            );
        }
        if self.kind != ModelKind::Minimal {
            ensure!(
                self.beta0.is_none() && self.w0.is_none(),
                Config,
                "beta0/w0 only apply to the minimal model"
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Mlp(MlpModel),
    Minimal(MinimalModel),
    Transformer(TransformerModel),
}

impl Model {
    pub fn init(config: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        Ok(match config.kind {
            ModelKind::MlpOnly => Self::Mlp(MlpModel::init(config.d, config.hidden, rng)?),
            ModelKind::Minimal => {
                let mut m =
                    MinimalModel::init(config.d, config.hidden, config.attention_init_std, rng)?;
                let (b, w) = (config.beta0.unwrap_or(m.beta()), config.w0.unwrap_or(m.w()));
                m.set_attention(b, w);
                Self::Minimal(m)
            }
            ModelKind::Transformer => {
                Self::Transformer(TransformerModel::init(config.d, config.hidden, rng)?)
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Mlp(_) => ModelKind::MlpOnly,
            Self::Minimal(_) => ModelKind::Minimal,
            Self::Transformer(_) => ModelKind::Transformer,
        }
    }

    /// Classification logit per row.
    pub fn logits(&self, batch: &SequenceBatch) -> Result<Vec<f64>> {
        match self {
            Self::Mlp(m) => m.forward_rows(&batch.target_items, batch.batch),
            Self::Minimal(m) => m.forward(batch),
            Self::Transformer(m) => m.forward(batch),
        }
    }

    /// Mean BCE loss on `batch`; gradients are added into the parameters.
    pub fn loss_and_grad(&mut self, batch: &SequenceBatch) -> Result<f64> {
        match self {
            Self::Mlp(m) => {
                use crate::autodiff::{Tape, Tensor};
                let mut tape = Tape::new();
                let vars = m.bind(&mut tape);
                let x = tape.constant(Tensor::new(
                    vec![batch.batch, batch.d],
                    batch.target_items.clone(),
                )?);
                let z = MlpModel::apply(&mut tape, &vars, x)?;
                let loss = tape.bce_with_logits(z, &batch.target_labels)?;
                let grads = tape.backward(loss)?;
                m.collect(&grads, &vars)?;
                Ok(tape.value(loss).item())
            }
            Self::Minimal(m) => m.loss_and_grad(batch),
            Self::Transformer(m) => m.loss_and_grad(batch),
        }
    }

    /// MLP logit of raw items (`n×D`), as seen without any context.
    pub fn item_logits(&self, items: &[f64], n: usize) -> Result<Vec<f64>> {
        match self {
            Self::Mlp(m) => m.forward_rows(items, n),
            Self::Minimal(m) => m.mlp.forward_rows(items, n),
            Self::Transformer(m) => m.residual_logits(items, n),
        }
    }

    /// `(β, w)` for the minimal model.
    pub fn attention_scalars(&self) -> Option<(f64, f64)> {
        match self {
            Self::Minimal(m) => Some((m.beta(), m.w())),
            _ => None,
        }
    }

    pub fn mlp_params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Self::Mlp(m) => m.params_mut(),
            Self::Minimal(m) => m.mlp.params_mut(),
            Self::Transformer(m) => m.mlp.params_mut(),
        }
    }

    /// `(mlp, attention)` parameter lists.
    pub fn split_params_mut(&mut self) -> (Vec<&mut Param>, Vec<&mut Param>) {
        match self {
            Self::Mlp(m) => (m.params_mut(), Vec::new()),
            Self::Minimal(m) => (m.mlp.params_mut(), vec![&mut m.beta, &mut m.w]),
            Self::Transformer(m) => (m.mlp.params_mut(), vec![&mut m.q, &mut m.k, &mut m.v]),
        }
    }

    /// Parameter groups named `mlp` and `attention` with their weight decays.
    pub fn param_groups(&mut self, mlp_decay: f64, attention_decay: f64) -> Vec<ParamGroup<'_>> {
        let (mlp, att) = self.split_params_mut();
        let mut groups = vec![ParamGroup::new("mlp", mlp, mlp_decay)];
        if !att.is_empty() {
            groups.push(ParamGroup::new("attention", att, attention_decay));
        }
        groups
    }

    /// All parameters in a fixed order.
    pub fn params(&self) -> Vec<&Param> {
        match self {
            Self::Mlp(m) => m.params(),
            Self::Minimal(m) => {
                let mut v = vec![&m.beta, &m.w];
                v.extend(m.mlp.params());
                v
            }
            Self::Transformer(m) => {
                let mut v = vec![&m.q, &m.k, &m.v];
                v.extend(m.mlp.params());
                v
            }
        }
    }

    pub fn params_mut_all(&mut self) -> Vec<&mut Param> {
        self.params_mut_ordered()
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.value.all_finite())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut_all() {
            p.zero_grad();
        }
    }
}
