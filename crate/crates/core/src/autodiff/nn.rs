//! Layers that bind their parameters onto a tape.

use super::{Gradients, Param, Tape, Tensor, Var};
use crate::math::RngStream;
use crate::{Error, Result};

/// Affine map `x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

/// Tape handles for one [`Linear`].
#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    /// Gaussian weights with std `1/√fan_in`, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Self {
        let std = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: Param::new(Tensor::randn(&[fan_in, fan_out], std, rng)),
            bias: Param::new(Tensor::zeros(&[fan_out])),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape) -> LinearVars {
        LinearVars {
            weight: tape.param(self.weight.value.clone()),
            bias: tape.param(self.bias.value.clone()),
        }
    }

    pub fn collect(&mut self, grads: &Gradients, vars: &LinearVars) -> Result<()> {
        collect_into(&mut self.weight, grads, vars.weight)?;
        collect_into(&mut self.bias, grads, vars.bias)
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

impl LinearVars {
    /// `[b, in] → [b, out]`.
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = tape.matmul(x, self.weight)?;
        tape.add_bias(h, self.bias)
    }
}

/// Adds the gradient recorded for `var` into `param`.
pub fn collect_into(param: &mut Param, grads: &Gradients, var: Var) -> Result<()> {
    let g = grads
        .get(var)
        .ok_or_else(|| Error::State(format!("no gradient reached node {}", var.id())))?;
    param.accumulate(g)
}

/// ReLU network ending in a single logit.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths = [in, h1, ..., 1]`.
    pub fn init(widths: &[usize], rng: &mut RngStream) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("bad MLP widths {widths:?}")));
        }
        Ok(Self {
            layers: widths
                .windows(2)
                .map(|w| Linear::init(w[0], w[1], rng))
                .collect(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<LinearVars> {
        self.layers.iter().map(|l| l.bind(tape)).collect()
    }

    /// `[b, in] → [b]`.
    pub fn forward(tape: &mut Tape, vars: &[LinearVars], x: Var) -> Result<Var> {
        let mut h = x;
        for (i, v) in vars.iter().enumerate() {
            h = v.apply(tape, h)?;
            if i + 1 < vars.len() {
                h = tape.relu(h);
            }
        }
        let b = tape.value(h).shape()[0];
        tape.reshape(h, &[b])
    }

    pub fn collect(&mut self, grads: &Gradients, vars: &[LinearVars]) -> Result<()> {
        for (l, v) in self.layers.iter_mut().zip(vars) {
            l.collect(grads, v)?;
        }
        Ok(())
    }

    /// Tape-free forward pass.
    pub fn eval(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let out = Self::forward(&mut tape, &vars, xv)?;
        Ok(tape.value(out).data().to_vec())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.value.numel() + l.bias.value.numel())
            .sum()
    }
}
