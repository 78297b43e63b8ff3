//! Adam with decoupled weight decay and per-group learning rates.

use alloc::vec;
use alloc::vec::Vec;

use crate::model::{ParamGroup, ParamSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr_gcn: f64,
    pub lr_other: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied to weights only; biases never decay.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr_gcn: 1e-3, lr_other: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    specs: Vec<ParamSpec>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, specs: Vec<ParamSpec>) -> Result<Self> {
        for (name, value) in [("lr_gcn", config.lr_gcn), ("lr_other", config.lr_other), ("eps", config.eps)] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidParameter { name, value, range: "(0, inf)" });
            }
        }
        for (name, value) in [("beta1", config.beta1), ("beta2", config.beta2)] {
            if !(0.0..1.0).contains(&value) {
                return Err(Error::InvalidParameter { name, value, range: "[0, 1)" });
            }
        }
        if !(config.weight_decay >= 0.0) {
            return Err(Error::InvalidParameter { name: "weight_decay", value: config.weight_decay, range: "[0, inf)" });
        }
        let m = specs.iter().map(|s| vec![0.0; s.len()]).collect();
        let v = specs.iter().map(|s| vec![0.0; s.len()]).collect();
        Ok(Adam { config, specs, m, v, t: 0 })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of `params` (ordered as the specs) using `grads`.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.specs.len() || grads.len() != self.specs.len() {
            return Err(Error::shape("Adam::step", "parameter list does not match optimizer state"));
        }
        self.t += 1;
        let c = self.config;
        let bias1 = 1.0 - libm::pow(c.beta1, self.t as f64);
        let bias2 = 1.0 - libm::pow(c.beta2, self.t as f64);
        for (((p, g), spec), (m, v)) in params.into_iter().zip(grads).zip(&self.specs).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::shape("Adam::step", alloc::format!("{} has mismatched lengths", spec.name)));
            }
            let lr = match spec.group {
                ParamGroup::Gcn => c.lr_gcn,
                ParamGroup::Other => c.lr_other,
            };
            let decay = if spec.is_bias { 0.0 } else { c.weight_decay };
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= lr * (m_hat / (libm::sqrt(v_hat) + c.eps) + decay * p[i]);
            }
        }
        Ok(())
    }
}
