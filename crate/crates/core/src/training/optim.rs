use super::{OptimizerKind, TrainConfig};
use crate::error::{Result, TvnetError};
use crate::tensor::Tensor;

/// Scales `grads` so their joint L2 norm is at most `max_norm` (0 = no
/// clipping). Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads {
            g.scale(s);
        }
    }
    norm
}

/// SGD with momentum or Adam, both with L2 weight decay added to the
/// gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub momentum: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Updates applied so far.
    pub step: u64,
    /// Momentum buffers (SGD) or first moments (Adam).
    pub first: Vec<Tensor>,
    /// Second moments (Adam only).
    pub second: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig) -> Self {
        Optimizer {
            kind: cfg.optimizer,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(TvnetError::Shape(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
            if self.kind == OptimizerKind::Adam {
                self.second = self.first.clone();
            }
        }
        self.step += 1;
        let (wd, mu) = (self.weight_decay, self.momentum);
        match self.kind {
            OptimizerKind::Sgd => {
                let first_step = self.step == 1;
                for ((p, g), buf) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    let w = p.data_mut();
                    for ((wi, gi), bi) in w.iter_mut().zip(g.data()).zip(buf.data_mut()) {
                        let d = gi + wd * *wi;
                        *bi = if first_step { d } else { mu * *bi + d };
                        *wi -= lr * *bi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (self.beta1, self.beta2);
                let c1 = 1.0 - b1.powi(self.step as i32);
                let c2 = 1.0 - b2.powi(self.step as i32);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    let w = p.data_mut();
                    for (((wi, gi), mi), vi) in w
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        let d = gi + wd * *wi;
                        *mi = b1 * *mi + (1.0 - b1) * d;
                        *vi = b2 * *vi + (1.0 - b2) * d * d;
                        *wi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
