//! Stochastic gradient descent with classical momentum.
//!
//! The velocity update is `v = momentum * v + g` followed by
//! `p = p - lr * v`. Velocity buffers are keyed by parameter position, so the
//! caller must pass parameters in the same order every step (both networks'
//! `params_mut` orderings are stable).

use crate::error::{Error, Result};
use crate::tape::Gradients;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::BadConfig(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::BadConfig(format!(
                "momentum must be in [0,1), got {momentum}"
            )));
        }
        Ok(Self { lr, momentum, velocity: Vec::new() })
    }

    /// Applies one update to every parameter in place. Parameters without a
    /// gradient on this tape (e.g. layers skipped by the batch) keep their
    /// velocity decaying toward zero.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &Gradients) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::BadConfig(format!(
                "optimizer saw {} parameters, expected {}",
                params.len(),
                self.velocity.len()
            )));
        }
        for (i, p) in params.into_iter().enumerate() {
            let g = grads.wrt(p);
            let v = &mut self.velocity[i];
            if v.len() != p.len() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {i} changed size ({} -> {})",
                    v.len(),
                    p.len()
                )));
            }
            let mut data = p.data().to_vec();
            for ((dj, vj), gj) in data.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                *vj = self.momentum * *vj + gj;
                *dj -= self.lr * *vj;
            }
            *p = p.with_data(data)?;
        }
        Ok(())
    }
}
