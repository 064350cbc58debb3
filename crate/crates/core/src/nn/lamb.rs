//! Layer-wise adaptive moments optimizer.

use serde::{Deserialize, Serialize};

use super::tensor::ParameterStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub trust_min: f64,
    pub trust_max: f64,
}

impl Default for LambConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.0,
            trust_min: 0.01,
            trust_max: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Lamb {
    pub config: LambConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl Lamb {
    pub fn new(config: LambConfig, store: &ParameterStore) -> Self {
        let zeros = || store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect::<Vec<_>>();
        Self { config, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients accumulated in `store`, then
    /// clears them. Parameters without a gradient are treated as having a
    /// zero gradient.
    pub fn step(&mut self, store: &mut ParameterStore) -> Result<()> {
        let c = self.config;
        for (_, t) in store.iter() {
            if let Some(g) = &t.grad {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Numeric("non-finite gradient".into()));
                }
            }
        }
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let tensor = store.get_mut(id);
            let grad = tensor.grad.take().unwrap_or_else(|| vec![0.0; tensor.numel()]);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let mut r = vec![0.0; grad.len()];
            for k in 0..grad.len() {
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * grad[k];
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * grad[k] * grad[k];
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                r[k] = mh / (vh.sqrt() + c.eps) + c.weight_decay * tensor.data[k];
            }
            let (wn, rn) = (norm(&tensor.data), norm(&r));
            let trust = if wn == 0.0 || rn == 0.0 { 1.0 } else { (wn / rn).clamp(c.trust_min, c.trust_max) };
            for (w, u) in tensor.data.iter_mut().zip(&r) {
                *w -= c.lr * trust * u;
            }
        }
        if !store.all_finite() {
            return Err(Error::Numeric("parameters became non-finite".into()));
        }
        Ok(())
    }
}
