//! Adam with bias correction, one first/second moment pair per parameter.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub struct Adam<E: Element> {
    pub config: AdamConfig,
    step: u64,
    m: HashMap<String, Tensor<E>>,
    v: HashMap<String, Tensor<E>>,
}

impl<E: Element> Adam<E> {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step: 0, m: HashMap::new(), v: HashMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` must hold a gradient for every parameter.
    pub fn step(&mut self, params: &mut ParamSet<E>, grads: &HashMap<String, Tensor<E>>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let b1 = E::from_f64(self.config.beta1);
        let b2 = E::from_f64(self.config.beta2);
        let lr = E::from_f64(self.config.lr);
        let eps = E::from_f64(self.config.eps);
        let c1 = E::one() - E::from_f64(self.config.beta1.powi(t));
        let c2 = E::one() - E::from_f64(self.config.beta2.powi(t));

        for (name, p) in params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::contract(format!("no gradient for parameter {name:?}")))?;
            if g.shape() != p.shape() {
                return Err(Error::contract(format!(
                    "gradient for {name:?} has shape {}, parameter has {}",
                    g.shape(),
                    p.shape()
                )));
            }
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let gi = gd[i];
                md[i] = b1 * md[i] + (E::one() - b1) * gi;
                vd[i] = b2 * vd[i] + (E::one() - b2) * gi * gi;
                let m_hat = md[i] / c1;
                let v_hat = vd[i] / c2;
                pd[i] = pd[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moment tensors in a fixed order for checkpointing.
    pub fn state(&self, params: &ParamSet<E>) -> Vec<(String, &Tensor<E>, &Tensor<E>)> {
        params
            .names()
            .filter_map(|n| match (self.m.get(n), self.v.get(n)) {
                (Some(m), Some(v)) => Some((n.to_string(), m, v)),
                _ => None,
            })
            .collect()
    }

    pub fn restore_state(&mut self, step: u64, moments: Vec<(String, Tensor<E>, Tensor<E>)>) {
        self.step = step;
        self.m.clear();
        self.v.clear();
        for (name, m, v) in moments {
            self.m.insert(name.clone(), m);
            self.v.insert(name, v);
        }
    }
}
