use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::Parameter;

/// Hyperparameters for one SGD update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Sgd {
            lr,
            momentum: 0.9,
            nesterov: true,
            weight_decay: 1e-4,
        }
    }

    pub fn with_lr(self, lr: f64) -> Self {
        Sgd { lr, ..self }
    }
}

/// Applies one momentum-SGD step to every parameter and clears its gradient.
///
/// Weight decay is folded into the gradient before the momentum buffer is
/// updated; with `nesterov` the step uses `d + momentum * buf`.
pub fn sgd_momentum_step<'a>(params: impl IntoIterator<Item = &'a mut Parameter>, opt: &Sgd) -> Result<()> {
    for p in params {
        let grad = p
            .grad
            .take()
            .ok_or_else(|| Error::Invalid("sgd step on a parameter without a gradient".into()))?;
        let Parameter { tensor, momentum, .. } = p;
        for ((w, g), buf) in tensor.data_mut().iter_mut().zip(&grad).zip(momentum.iter_mut()) {
            let d = g + opt.weight_decay * *w;
            let step = if opt.momentum != 0.0 {
                *buf = opt.momentum * *buf + d;
                if opt.nesterov {
                    d + opt.momentum * *buf
                } else {
                    *buf
                }
            } else {
                d
            };
            *w -= opt.lr * step;
        }
    }
    Ok(())
}

/// Cosine-annealed learning rate: `lr0 * (1 + cos(pi * step / total)) / 2`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64> {
    if step > total_steps {
        return Err(Error::Invalid(format!("lr step {step} beyond schedule of {total_steps}")));
    }
    if total_steps == 0 {
        return Ok(lr0);
    }
    Ok(lr0 * (1.0 + (PI * step as f64 / total_steps as f64).cos()) / 2.0)
}
