//! Trainable parameters and plain SGD with per-group weight decay.

use super::Tensor;
use crate::{ensure, Result};

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        Self { value, grad: None }
    }

    /// Adds `g` into the gradient buffer.
    pub fn accumulate(&mut self, g: &Tensor) -> Result<()> {
        ensure!(
            g.shape() == self.value.shape(),
            Shape,
            "gradient {:?} for parameter {:?}",
            g.shape(),
            self.value.shape()
        );
        match &mut self.grad {
            Some(acc) => acc
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.clone()),
        }
        Ok(())
    }

    /// Marks the gradient as populated with zeros.
    pub fn zero_grad(&mut self) {
        self.grad = Some(Tensor::zeros(self.value.shape()));
    }
}

/// Parameters sharing one weight decay and learning-rate multiplier.
#[derive(Debug)]
pub struct ParamGroup<'a> {
    pub name: String,
    pub params: Vec<&'a mut Param>,
    pub weight_decay: f64,
    pub lr_mult: f64,
}

impl<'a> ParamGroup<'a> {
    pub fn new(name: impl Into<String>, params: Vec<&'a mut Param>, weight_decay: f64) -> Self {
        Self {
            name: name.into(),
            params,
            weight_decay,
            lr_mult: 1.0,
        }
    }

    pub fn with_lr_mult(mut self, lr_mult: f64) -> Self {
        self.lr_mult = lr_mult;
        self
    }
}

/// `θ ← θ − lr·mult·(grad + λθ)` for every parameter, then zeroes gradients.
///
/// Validates every group before touching any parameter.
pub fn sgd_step(groups: &mut [ParamGroup<'_>], lr: f64) -> Result<()> {
    ensure!(
        lr.is_finite() && lr > 0.0,
        Config,
        "learning rate must be positive, got {lr}"
    );
    for g in groups.iter() {
        ensure!(
            g.weight_decay >= 0.0,
            Config,
            "group {}: negative weight decay",
            g.name
        );
        ensure!(
            g.lr_mult > 0.0,
            Config,
            "group {}: lr multiplier must be positive",
            g.name
        );
        for (i, p) in g.params.iter().enumerate() {
            let Some(grad) = &p.grad else {
                return Err(crate::Error::State(format!(
                    "group {}: parameter {i} has no gradient",
                    g.name
                )));
            };
            ensure!(
                grad.shape() == p.value.shape(),
                Shape,
                "group {}: gradient shape mismatch",
                g.name
            );
        }
    }
    for g in groups.iter_mut() {
        let step = lr * g.lr_mult;
        let decay = g.weight_decay;
        for p in g.params.iter_mut() {
            let grad = p.grad.as_mut().expect("checked above");
            for (t, gr) in p.value.data_mut().iter_mut().zip(grad.data_mut()) {
                *t -= step * (*gr + decay * *t);
                *gr = 0.0;
            }
        }
    }
    Ok(())
}
