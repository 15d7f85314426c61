use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// SGD with classic (heavy-ball) momentum:
/// `v ← momentum·v + g`, `p ← p − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(store: &ParamStore, learning_rate: f64, momentum: f64) -> Self {
        let velocity = store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Sgd {
            learning_rate,
            momentum,
            velocity,
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.velocity.len() || store.len() != self.velocity.len() {
            return Err(Error::invalid(format!(
                "sgd_step: {} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for ((p, v), g) in store.tensors_mut().iter_mut().zip(&mut self.velocity).zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "sgd_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            v.scale(self.momentum);
            v.axpy(1.0, g);
            p.axpy(-self.learning_rate, v);
        }
        Ok(())
    }
}
