//! Momentum SGD with inverse-time learning-rate decay.

use serde::{Deserialize, Serialize};

use super::model::{Gradients, Network};
use super::{NnetError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: f64,
    pub decay: f64,
    pub momentum: f64,
    #[serde(skip)]
    velocity: Vec<Vec<Vec<f64>>>,
}

impl Sgd {
    pub fn new(lr: f64, decay: f64, momentum: f64) -> Self {
        Self {
            lr,
            decay,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// `lr / (1 + decay * epoch)`.
    pub fn effective_lr(&self, epoch: usize) -> f64 {
        self.lr / (1.0 + self.decay * epoch as f64)
    }

    /// Applies one update to every non-frozen parameter block that has a
    /// gradient.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients, epoch: usize) -> Result<()> {
        let layers = net.layers_mut();
        if grads.per_layer.len() != layers.len() {
            return Err(NnetError::Contract(format!(
                "gradients for {} layers, network has {}",
                grads.per_layer.len(),
                layers.len()
            )));
        }
        if self.velocity.len() != layers.len() {
            self.velocity = vec![Vec::new(); layers.len()];
        }
        let lr = self.effective_lr(epoch);
        for ((layer, grads), vel) in layers
            .iter_mut()
            .zip(&grads.per_layer)
            .zip(&mut self.velocity)
        {
            if grads.is_empty() {
                continue;
            }
            let mut params = layer.params_mut();
            if grads.len() != params.len() {
                return Err(NnetError::Contract("gradient block count mismatch".into()));
            }
            if vel.len() != params.len() {
                *vel = params.iter().map(|p| vec![0.0; p.len()]).collect();
            }
            for ((p, g), v) in params.iter_mut().zip(grads).zip(vel.iter_mut()) {
                if g.len() != p.len() || v.len() != p.len() {
                    return Err(NnetError::Contract(format!(
                        "gradient for {} has {} values, expected {}",
                        p.name,
                        g.len(),
                        p.len()
                    )));
                }
                if p.frozen {
                    continue;
                }
                for ((w, &gv), vv) in p.value.iter_mut().zip(g).zip(v.iter_mut()) {
                    *vv = self.momentum * *vv - lr * gv;
                    *w += *vv;
                }
            }
        }
        Ok(())
    }
}
