use super::mlp::MlpModel;
use crate::autodiff::{LinearVars, Param, Tape, Tensor, Var};
use crate::data::{encode_tokens, LabelEncoding, SequenceBatch, TokenMatrix};
use crate::math::RngStream;
use crate::{ensure, Result};

/// One attention layer over layer-normed one-hot tokens followed by an MLP
/// on the target position.
///
/// `q`, `k`, `v` act on column vectors: the score of token `j` is
/// `t'_jᵀ Kᵀ Q t'_target`, and the head writes `Σ_j a_j V t'_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerModel {
    pub q: Param,
    pub k: Param,
    pub v: Param,
    pub mlp: MlpModel,
    d: usize,
}

pub(crate) struct TransformerPass {
    pub tape: Tape,
    pub logits: Var,
    /// Attention output (no residual), `B×T`.
    pub head: Var,
    pub attention: Var,
    pub q: Var,
    pub k: Var,
    pub v: Var,
    pub mlp: Vec<LinearVars>,
}

/// `(KᵀQ, V)` for the two-scalar ansatz: `β·I` on the item block of `KᵀQ`,
/// `w·I` on the label block of `V`, zeros elsewhere.
pub fn ablate_kqv(beta: f64, w: f64, d: usize) -> (Tensor, Tensor) {
    let t = LabelEncoding::OneHot.token_width(d);
    let mut ktq = Tensor::zeros(&[t, t]);
    let mut v = Tensor::zeros(&[t, t]);
    for i in 0..d {
        ktq.data_mut()[i * t + i] = beta;
    }
    for i in d..t {
        v.data_mut()[i * t + i] = w;
    }
    (ktq, v)
}

fn identity(t: usize) -> Tensor {
    let mut m = Tensor::zeros(&[t, t]);
    for i in 0..t {
        m.data_mut()[i * t + i] = 1.0;
    }
    m
}

impl TransformerModel {
    /// Fan-in Gaussian `Q`, `K`, `V` and MLP.
    pub fn init(d: usize, hidden: usize, rng: &mut RngStream) -> Result<Self> {
        let t = LabelEncoding::OneHot.token_width(d);
        let std = 1.0 / (t as f64).sqrt();
        let q = Param::new(Tensor::randn(&[t, t], std, rng));
        let k = Param::new(Tensor::randn(&[t, t], std, rng));
        let v = Param::new(Tensor::randn(&[t, t], std, rng));
        let mlp = MlpModel::init(t, hidden, rng)?;
        Ok(Self { q, k, v, mlp, d })
    }

    pub fn item_dim(&self) -> usize {
        self.d
    }

    pub fn token_width(&self) -> usize {
        LabelEncoding::OneHot.token_width(self.d)
    }

    /// Sets `K = I`, `Q = KᵀQ` and `V` from [`ablate_kqv`].
    pub fn set_ablated(&mut self, beta: f64, w: f64) {
        let (ktq, v) = ablate_kqv(beta, w, self.d);
        self.k.value = identity(self.token_width());
        self.q.value = ktq;
        self.v.value = v;
    }

    pub(crate) fn record(&self, tokens: &TokenMatrix) -> Result<TransformerPass> {
        ensure!(
            tokens.encoding == LabelEncoding::OneHot,
            Config,
            "the transformer consumes one-hot tokens"
        );
        let (b, l, t) = (tokens.batch(), tokens.seq_len(), tokens.width());
        ensure!(
            t == self.token_width(),
            Shape,
            "token width {t}, model expects {}",
            self.token_width()
        );
        let mut tape = Tape::new();
        let q = tape.param(self.q.value.clone());
        let k = tape.param(self.k.value.clone());
        let v = tape.param(self.v.value.clone());
        let mlp = self.mlp.bind(&mut tape);

        let raw = tape.constant(tokens.tokens.clone());
        let tn = tape.layer_norm(raw);
        let tgt = tape.select_axis1(tn, l - 1)?;
        // r = (KᵀQ t'_target)ᵀ = t'_targetᵀ Qᵀ K, so scores_j = t'_j · r.
        let qt = tape.transpose(q)?;
        let qrow = tape.matmul(tgt, qt)?;
        let r = tape.matmul(qrow, k)?;
        let r3 = tape.reshape(r, &[b, t, 1])?;
        let scores = tape.batch_matmul(tn, r3)?;
        let scores = tape.reshape(scores, &[b, l])?;
        let a = tape.softmax(scores);
        let a3 = tape.reshape(a, &[b, 1, l])?;
        let ctx = tape.batch_matmul(a3, tn)?;
        let ctx = tape.reshape(ctx, &[b, t])?;
        let vt = tape.transpose(v)?;
        let head = tape.matmul(ctx, vt)?;
        let u = tape.add(tgt, head)?;
        let logits = MlpModel::apply(&mut tape, &mlp, u)?;
        Ok(TransformerPass {
            tape,
            logits,
            head,
            attention: a,
            q,
            k,
            v,
            mlp,
        })
    }

    pub fn forward_tokens(&self, tokens: &TokenMatrix) -> Result<Vec<f64>> {
        let pass = self.record(tokens)?;
        Ok(pass.tape.value(pass.logits).data().to_vec())
    }

    pub fn forward(&self, batch: &SequenceBatch) -> Result<Vec<f64>> {
        self.forward_tokens(&encode_tokens(batch, LabelEncoding::OneHot))
    }

    /// Attention weights over all `N+1` positions, `B×(N+1)`.
    pub fn attention_weights(&self, tokens: &TokenMatrix) -> Result<Vec<f64>> {
        let pass = self.record(tokens)?;
        Ok(pass.tape.value(pass.attention).data().to_vec())
    }

    /// Label read-out of the attention head: `+1` slot minus `−1` slot of
    /// the head output, per row.
    pub fn label_readout(&self, tokens: &TokenMatrix) -> Result<Vec<f64>> {
        let pass = self.record(tokens)?;
        let t = tokens.width();
        let d = self.d;
        Ok(pass
            .tape
            .value(pass.head)
            .data()
            .chunks(t)
            .map(|h| h[d] - h[d + 1])
            .collect())
    }

    pub fn loss_and_grad(&mut self, batch: &SequenceBatch) -> Result<f64> {
        let tokens = encode_tokens(batch, LabelEncoding::OneHot);
        let mut pass = self.record(&tokens)?;
        let loss = pass
            .tape
            .bce_with_logits(pass.logits, &batch.target_labels)?;
        let grads = pass.tape.backward(loss)?;
        crate::autodiff::nn::collect_into(&mut self.q, &grads, pass.q)?;
        crate::autodiff::nn::collect_into(&mut self.k, &grads, pass.k)?;
        crate::autodiff::nn::collect_into(&mut self.v, &grads, pass.v)?;
        self.mlp.collect(&grads, &pass.mlp)?;
        Ok(pass.tape.value(loss).item())
    }

    /// MLP logit on the layer-normed target token alone, for raw items `n×D`.
    pub fn residual_logits(&self, items: &[f64], n: usize) -> Result<Vec<f64>> {
        let d = self.d;
        let t = self.token_width();
        ensure!(items.len() == n * d, Shape, "expected {n}×{d} items");
        let mut toks = vec![0.0; n * t];
        for i in 0..n {
            toks[i * t..i * t + d].copy_from_slice(&items[i * d..(i + 1) * d]);
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![n, t], toks)?);
        let xn = tape.layer_norm(x);
        let normed = tape.value(xn).data().to_vec();
        self.mlp.forward_rows(&normed, n)
    }
}
