use crate::autodiff::{Gradients, LinearVars, Mlp, Param, Tape, Tensor, Var};
use crate::math::RngStream;
use crate::{ensure, Result};

/// Three-layer ReLU network `D_in → d → d → 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub net: Mlp,
}

impl MlpModel {
    pub fn init(d_in: usize, hidden: usize, rng: &mut RngStream) -> Result<Self> {
        Ok(Self {
            net: Mlp::init(&[d_in, hidden, hidden, 1], rng)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn hidden(&self) -> usize {
        self.net.layers[0].fan_out()
    }

    /// Logit for a single input vector.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward_rows(x, 1)?[0])
    }

    /// Logits for `rows` inputs stored row-major in `x`.
    pub fn forward_rows(&self, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        let d = self.input_dim();
        ensure!(
            x.len() == rows * d,
            Shape,
            "MLP expects {rows}×{d} inputs, got {} values",
            x.len()
        );
        if rows == 0 {
            return Ok(Vec::new());
        }
        self.net.eval(&Tensor::new(vec![rows, d], x.to_vec())?)
    }

    pub(crate) fn bind(&self, tape: &mut Tape) -> Vec<LinearVars> {
        self.net.bind(tape)
    }

    pub(crate) fn apply(tape: &mut Tape, vars: &[LinearVars], x: Var) -> Result<Var> {
        Mlp::forward(tape, vars, x)
    }

    pub(crate) fn collect(&mut self, grads: &Gradients, vars: &[LinearVars]) -> Result<()> {
        self.net.collect(grads, vars)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.net
            .layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }
}
