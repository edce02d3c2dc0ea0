use std::time::Instant;

use sha2::{Digest, Sha256};

use super::record::{EvalRow, RunRecord, RunStop};
use super::{StopRule, TrainConfig};
use crate::autodiff::sgd_step;
use crate::data::{
    build_balanced_batch, build_icl_eval_batch, build_iwl_eval_batch, build_training_batch,
    sample_dataset, Dataset, ItemSource, SequenceBatch, ZipfSampler,
};
use crate::math::{log_sigmoid, RngStream};
use crate::models::Model;
use crate::theory::{order_params_from_logits, LogitDistribution};
use crate::Result;

/// Stream ids derived from the run seed.
pub mod streams {
    pub const DATASET: u64 = 1;
    pub const INIT: u64 = 2;
    pub const BATCH: u64 = 3;
    pub const EVAL: u64 = 4;
}

/// Accuracy with ties at a zero logit counted as half correct.
pub fn accuracy(logits: &[f64], labels: &[f64]) -> f64 {
    let hits: f64 = logits
        .iter()
        .zip(labels)
        .map(|(z, l)| {
            let m = z * l;
            if m > 0.0 {
                1.0
            } else if m == 0.0 {
                0.5
            } else {
                0.0
            }
        })
        .sum();
    hits / logits.len() as f64
}

/// Mean of `−log σ(ℓ z)`.
pub fn bce(logits: &[f64], labels: &[f64]) -> f64 {
    -logits
        .iter()
        .zip(labels)
        .map(|(z, l)| log_sigmoid(z * l))
        .sum::<f64>()
        / logits.len() as f64
}

/// SHA-256 over every parameter value, in the model's fixed order.
pub fn parameter_hash(model: &Model) -> String {
    let mut h = Sha256::new();
    for p in model.params() {
        for v in p.value.data() {
            h.update(v.to_le_bytes());
        }
    }
    super::record::hex_digest(&h.finalize())
}

/// A training run that can be stepped and evaluated piecewise.
pub struct Trainer {
    config: TrainConfig,
    model: Model,
    dataset: Option<Dataset>,
    zipf: Option<ZipfSampler>,
    /// `+1` items used for order parameters (finite datasets only).
    plus_items: Vec<f64>,
    batch_rng: RngStream,
    eval_rng: RngStream,
    iteration: usize,
}

impl Trainer {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let data = &config.data;
        let dataset = match data.k.finite() {
            Some(_) => Some(sample_dataset(
                data,
                &mut RngStream::new(config.dataset_seed(), streams::DATASET),
            )?),
            None => None,
        };
        let zipf = match (data.zipf_alpha, data.k.finite()) {
            (Some(a), Some(k)) => Some(ZipfSampler::new(k, a)?),
            _ => None,
        };
        let mut plus_items = Vec::new();
        if let Some(ds) = &dataset {
            let plus = (0..ds.len())
                .filter(|&i| ds.label(i) > 0.0)
                .take(config.order_param_items);
            for i in plus {
                plus_items.extend_from_slice(ds.item(i));
            }
        }
        let model = Model::init(
            &config.model,
            &mut RngStream::new(config.seed, streams::INIT),
        )?;
        Ok(Self {
            config: config.clone(),
            model,
            dataset,
            zipf,
            plus_items,
            batch_rng: RngStream::new(config.seed, streams::BATCH),
            eval_rng: RngStream::new(config.seed, streams::EVAL),
            iteration: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn dataset(&self) -> Option<&Dataset> {
        self.dataset.as_ref()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn source(&self) -> ItemSource<'_> {
        match &self.dataset {
            Some(ds) => ItemSource::Finite {
                dataset: ds,
                zipf: self.zipf.as_ref(),
            },
            None => ItemSource::Fresh {
                d: self.config.data.d,
            },
        }
    }

    /// Draws the next training batch from the batch stream.
    pub fn training_batch(&mut self) -> Result<SequenceBatch> {
        let (n, b) = (self.config.data.n, self.config.batch);
        let mut rng = self.batch_rng.clone();
        let batch = if self.config.data.balanced {
            build_balanced_batch(self.source(), n, b, &mut rng)
        } else {
            build_training_batch(self.source(), n, b, &mut rng)
        };
        self.batch_rng = rng;
        batch
    }

    /// Loss and gradients on `batch` without updating the parameters.
    fn loss_and_grad(&mut self, batch: &SequenceBatch) -> Result<f64> {
        self.model.zero_grads();
        self.model.loss_and_grad(batch)
    }

    fn update(&mut self) -> Result<()> {
        let (lr, dm, da) = (
            self.config.lr,
            self.config.mlp_weight_decay,
            self.config.attention_weight_decay,
        );
        sgd_step(&mut self.model.param_groups(dm, da), lr)?;
        self.iteration += 1;
        Ok(())
    }

    /// One SGD iteration; returns the loss before the update.
    pub fn step(&mut self) -> Result<f64> {
        let batch = self.training_batch()?;
        let loss = self.loss_and_grad(&batch)?;
        self.update()?;
        Ok(loss)
    }

    /// Batch whose target comes from the dataset with no exemplar in context.
    fn iwl_batch(&mut self, ds: &Dataset) -> Result<SequenceBatch> {
        let (n, b) = (self.config.data.n, self.config.eval_batch);
        if ds.len() > n {
            return build_iwl_eval_batch(ds, n, b, &mut self.eval_rng);
        }
        // K ≤ N: no context can exclude the target, so contexts are fresh items.
        let mut batch = build_icl_eval_batch(ds.dim(), n, b, &mut self.eval_rng)?;
        batch.target_items.clear();
        batch.target_labels.clear();
        let mut idx = Vec::with_capacity(b);
        for e in batch.exemplar.iter_mut() {
            let t = self.eval_rng.index(ds.len());
            batch.target_items.extend_from_slice(ds.item(t));
            batch.target_labels.push(ds.label(t));
            idx.push(t);
            *e = None;
        }
        batch.target_indices = Some(idx);
        Ok(batch)
    }

    /// Metrics at the current iteration. Never touches the parameters.
    pub fn evaluate(&mut self, train_loss: f64) -> Result<EvalRow> {
        let (d, n, b) = (
            self.config.data.d,
            self.config.data.n,
            self.config.eval_batch,
        );
        let icl = build_icl_eval_batch(d, n, b, &mut self.eval_rng)?;
        let z = self.model.logits(&icl)?;
        let (icl_acc, icl_loss) = (
            accuracy(&z, &icl.target_labels),
            bce(&z, &icl.target_labels),
        );

        let (iwl_acc, iwl_loss, plus_logits) = match self.dataset.take() {
            Some(ds) => {
                let res = self.iwl_batch(&ds).and_then(|batch| {
                    let z = self.model.logits(&batch)?;
                    let count = self.plus_items.len() / d;
                    let plus = if count > 0 {
                        self.model.item_logits(&self.plus_items, count)?
                    } else {
                        Vec::new()
                    };
                    Ok((
                        accuracy(&z, &batch.target_labels),
                        bce(&z, &batch.target_labels),
                        plus,
                    ))
                });
                self.dataset = Some(ds);
                res?
            }
            None => {
                // Fresh +1 items stand in for the resampled training set.
                let mut items = Vec::with_capacity(b * d);
                for _ in 0..b * d {
                    items.push(self.eval_rng.normal() / (d as f64).sqrt());
                }
                (f64::NAN, f64::NAN, self.model.item_logits(&items, b)?)
            }
        };
        let p = if plus_logits.is_empty() || plus_logits.iter().any(|v| !v.is_finite()) {
            crate::theory::OrderParams {
                c1: f64::NAN,
                c2: f64::NAN,
                c3: f64::NAN,
                t: self.iteration as f64,
            }
        } else {
            order_params_from_logits(&LogitDistribution::new(plus_logits, self.iteration as f64)?)
        };
        let (beta, w) = self
            .model
            .attention_scalars()
            .unwrap_or((f64::NAN, f64::NAN));
        Ok(EvalRow {
            iteration: self.iteration,
            train_loss,
            icl_acc,
            icl_loss,
            iwl_acc,
            iwl_loss,
            c1: p.c1,
            c2: p.c2,
            c3: p.c3,
            beta,
            w,
        })
    }

    fn stop_after(&self, row: &EvalRow) -> Option<RunStop> {
        match self.config.stop {
            StopRule::Budget => None,
            StopRule::IclAcquired { icl } => (row.icl_acc >= icl).then_some(RunStop::IclAcquired),
            StopRule::Memorized { c1 } => (row.c1 <= c1).then_some(RunStop::Memorized),
            StopRule::IclOrMemorized { icl, c1 } => {
                if row.icl_acc >= icl {
                    Some(RunStop::IclAcquired)
                } else if row.c1 <= c1 {
                    Some(RunStop::Memorized)
                } else {
                    None
                }
            }
        }
    }

    /// Runs to the end of the budget or an early stop. A row is evaluated
    /// before every `eval_interval`-th update and once at the end.
    pub fn run(mut self) -> Result<(RunRecord, Model)> {
        let mut rows = Vec::new();
        let budget = self.config.iterations;
        let interval = self.config.eval_interval;
        let finish = |rows, stop, it, model| {
            Ok((
                RunRecord {
                    rows,
                    stop,
                    iterations: it,
                },
                model,
            ))
        };
        while self.iteration < budget {
            let batch = self.training_batch()?;
            let loss = self.loss_and_grad(&batch)?;
            if !loss.is_finite() {
                log::warn!("non-finite loss at iteration {}", self.iteration);
                let it = self.iteration;
                return finish(rows, RunStop::Divergence, it, self.model);
            }
            if self.iteration.is_multiple_of(interval) {
                let row = self.evaluate(loss)?;
                let stop = self.stop_after(&row);
                rows.push(row);
                if let Some(s) = stop {
                    let it = self.iteration;
                    return finish(rows, s, it, self.model);
                }
            }
            self.update()?;
            if !self.model.all_finite() {
                let it = self.iteration;
                return finish(rows, RunStop::Divergence, it, self.model);
            }
        }
        let batch = self.training_batch()?;
        let z = self.model.logits(&batch)?;
        let loss = bce(&z, &batch.target_labels);
        let row = self.evaluate(loss)?;
        let stop = self.stop_after(&row).unwrap_or(RunStop::Budget);
        rows.push(row);
        finish(rows, stop, budget, self.model)
    }
}

/// Trains one run and returns its metric record.
pub fn train(config: &TrainConfig) -> Result<RunRecord> {
    Ok(Trainer::new(config)?.run()?.0)
}

/// Trains one run and returns the record and the final model.
pub fn train_with_model(config: &TrainConfig) -> Result<(RunRecord, Model)> {
    Trainer::new(config)?.run()
}

/// Trains and times one run.
pub fn train_timed(config: &TrainConfig) -> Result<(RunRecord, Model, f64)> {
    let start = Instant::now();
    let (r, m) = train_with_model(config)?;
    Ok((r, m, start.elapsed().as_secs_f64()))
}
