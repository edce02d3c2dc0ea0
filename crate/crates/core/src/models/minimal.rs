use super::mlp::MlpModel;
use crate::autodiff::{Param, Tape, Tensor, Var};
use crate::data::SequenceBatch;
use crate::math::RngStream;
use crate::{ensure, Result};

/// Two-scalar attention head plus an MLP on the target item.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimalModel {
    pub beta: Param,
    pub w: Param,
    pub mlp: MlpModel,
}

/// Forward pass recorded on a tape.
pub(crate) struct MinimalPass {
    pub tape: Tape,
    pub logits: Var,
    pub beta: Var,
    pub w: Var,
    pub mlp: Vec<crate::autodiff::LinearVars>,
}

/// `x_j · x_target` for every context position, `B×N`.
pub fn similarity_scores(batch: &SequenceBatch) -> Vec<f64> {
    let mut s = Vec::with_capacity(batch.batch * batch.n);
    for row in 0..batch.batch {
        let t = batch.target_item(row);
        for j in 0..batch.n {
            s.push(
                batch
                    .context_item(row, j)
                    .iter()
                    .zip(t)
                    .map(|(a, b)| a * b)
                    .sum(),
            );
        }
    }
    s
}

fn attention_head(tape: &mut Tape, beta: Var, w: Var, batch: &SequenceBatch) -> Result<Var> {
    let shape = vec![batch.batch, batch.n];
    let s = tape.constant(Tensor::new(shape.clone(), similarity_scores(batch))?);
    let labels = tape.constant(Tensor::new(shape, batch.context_labels.clone())?);
    let scaled = tape.scale_by(s, beta)?;
    let a = tape.softmax(scaled);
    let weighted = tape.mul(a, labels)?;
    let read = tape.sum_last_axis(weighted);
    tape.scale_by(read, w)
}

/// Softmax-weighted label read-out over the `N` context items, per row.
pub fn attention_logit(beta: f64, w: f64, batch: &SequenceBatch) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let b = tape.constant(Tensor::scalar(beta));
    let wv = tape.constant(Tensor::scalar(w));
    let z = attention_head(&mut tape, b, wv, batch)?;
    Ok(tape.value(z).data().to_vec())
}

impl MinimalModel {
    /// `β, w ~ N(0, init_std²)`, MLP at fan-in scale.
    pub fn init(d: usize, hidden: usize, init_std: f64, rng: &mut RngStream) -> Result<Self> {
        let mlp = MlpModel::init(d, hidden, rng)?;
        let beta = init_std * rng.normal();
        let w = init_std * rng.normal();
        Ok(Self {
            beta: Param::new(Tensor::scalar(beta)),
            w: Param::new(Tensor::scalar(w)),
            mlp,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta.value.item()
    }

    pub fn w(&self) -> f64 {
        self.w.value.item()
    }

    pub fn set_attention(&mut self, beta: f64, w: f64) {
        self.beta.value = Tensor::scalar(beta);
        self.w.value = Tensor::scalar(w);
    }

    pub(crate) fn record(&self, batch: &SequenceBatch) -> Result<MinimalPass> {
        ensure!(
            batch.d == self.mlp.input_dim(),
            Shape,
            "items have dimension {}, model expects {}",
            batch.d,
            self.mlp.input_dim()
        );
        let mut tape = Tape::new();
        let beta = tape.param(self.beta.value.clone());
        let w = tape.param(self.w.value.clone());
        let mlp = self.mlp.bind(&mut tape);
        let x = tape.constant(Tensor::new(
            vec![batch.batch, batch.d],
            batch.target_items.clone(),
        )?);
        let z_mlp = MlpModel::apply(&mut tape, &mlp, x)?;
        let z_att = attention_head(&mut tape, beta, w, batch)?;
        let logits = tape.add(z_mlp, z_att)?;
        Ok(MinimalPass {
            tape,
            logits,
            beta,
            w,
            mlp,
        })
    }

    /// `z_MLP + z_ATT` per row.
    pub fn forward(&self, batch: &SequenceBatch) -> Result<Vec<f64>> {
        let pass = self.record(batch)?;
        Ok(pass.tape.value(pass.logits).data().to_vec())
    }

    /// Mean BCE loss; gradients are added into the parameters.
    pub fn loss_and_grad(&mut self, batch: &SequenceBatch) -> Result<f64> {
        let mut pass = self.record(batch)?;
        let loss = pass
            .tape
            .bce_with_logits(pass.logits, &batch.target_labels)?;
        let grads = pass.tape.backward(loss)?;
        crate::autodiff::nn::collect_into(&mut self.beta, &grads, pass.beta)?;
        crate::autodiff::nn::collect_into(&mut self.w, &grads, pass.w)?;
        self.mlp.collect(&grads, &pass.mlp)?;
        Ok(pass.tape.value(loss).item())
    }
}
