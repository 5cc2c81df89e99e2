use serde::{Deserialize, Serialize};

use crate::numerics::ParamStore;

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: 35.0,
        }
    }
}

/// Adam with decoupled weight decay and global norm clipping.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Updates every parameter from its accumulated gradient (missing
    /// gradients count as zero) and returns the pre-clip gradient norm.
    pub fn step(&mut self, store: &mut ParamStore) -> f64 {
        let c = self.cfg;
        let norm = store
            .tensors()
            .iter()
            .filter_map(|t| t.grad())
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        let clip = if c.clip_norm > 0.0 && norm > c.clip_norm {
            c.clip_norm / norm
        } else {
            1.0
        };
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (k, tensor) in store.tensors_mut().iter_mut().enumerate() {
            let grad: Vec<f64> = match tensor.grad() {
                Some(g) => g.iter().map(|x| x * clip).collect(),
                None => vec![0.0; tensor.numel()],
            };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, w) in tensor.data_mut().iter_mut().enumerate() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
                *w -= c.lr * (update + c.weight_decay * *w);
            }
        }
        norm
    }
}
