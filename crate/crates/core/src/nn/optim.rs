use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd {
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl Optimizer {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Optimizer::Sgd { momentum } => (0.0..1.0).contains(&momentum),
            Optimizer::Adam { beta1, beta2, eps } => {
                (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "optimizer hyperparameters out of range: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Per-parameter moment buffers.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    optimizer: Optimizer,
    steps: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(optimizer: Optimizer) -> Self {
        Self {
            optimizer,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of `params` (in the order the gradients were produced).
    pub fn step(&mut self, params: Vec<&mut Vec<T>>, grads: &[Vec<T>], lr: f64) -> Result<()> {
        if params.len() != grads.len()
            || params.iter().zip(grads).any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::ShapeMismatch("gradients do not match parameters".into()));
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
            if matches!(self.optimizer, Optimizer::Adam { .. }) {
                self.second = self.first.clone();
            }
        }
        self.steps += 1;
        match self.optimizer {
            Optimizer::Sgd { momentum } => {
                let (mu, lr_t) = (T::from_f64(momentum), T::from_f64(lr));
                for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.first) {
                    for ((w, &dw), vel) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                        *vel = mu * *vel + dw;
                        *w -= lr_t * *vel;
                    }
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
                let (one, eps_t) = (T::one(), T::from_f64(eps));
                let step = T::from_f64(lr / c1);
                let inv_c2 = T::from_f64(1.0 / c2);
                for (((p, g), m), v) in params
                    .into_iter()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((w, &dw), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = b1 * *mi + (one - b1) * dw;
                        *vi = b2 * *vi + (one - b2) * dw * dw;
                        *w -= step * *mi / ((*vi * inv_c2).sqrt() + eps_t);
                    }
                }
            }
        }
        Ok(())
    }
}
