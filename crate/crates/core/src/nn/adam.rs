//! Adam with bias correction, operating on a [`ParamStore`].

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    cfg: AdamConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let m = store.ids().map(|id| Array2::zeros(store.value(id).dim())).collect();
        let v = store.ids().map(|id| Array2::zeros(store.value(id).dim())).collect();
        Self { cfg, m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// Apply one update from the store's current gradients, then zero them.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for id in store.ids().collect::<Vec<_>>() {
            let g = store.grad(id).clone();
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            m.zip_mut_with(&g, |mi, &gi| *mi = beta1 * *mi + (1.0 - beta1) * gi);
            v.zip_mut_with(&g, |vi, &gi| *vi = beta2 * *vi + (1.0 - beta2) * gi * gi);
            let value = store.value_mut(id);
            for ((p, &mi), &vi) in value.iter_mut().zip(m.iter()).zip(v.iter()) {
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        store.zero_grads();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParamStore::new();
        let id = store.insert("w", array![[1.5, -2.5]]).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        adam.step(&mut store);
        assert_eq!(store.value(id), &array![[1.5, -2.5]]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn single_step_matches_hand_arithmetic() {
        // g = 1: m = 0.1, v = 0.001, m̂ = 1, v̂ = 1 ⇒ Δ = −lr / (1 + ε)
        let mut store = ParamStore::new();
        let id = store.insert("w", array![[0.0]]).unwrap();
        store.grad_mut(id)[[0, 0]] = 1.0;
        let cfg = AdamConfig::default();
        let mut adam = AdamState::new(cfg, &store);
        adam.step(&mut store);
        let expected = -cfg.lr / (1.0 + cfg.eps);
        assert_abs_diff_eq!(store.value(id)[[0, 0]], expected, epsilon = 1e-12);
        // gradients were zeroed
        assert_eq!(store.grad(id)[[0, 0]], 0.0);
    }

    #[test]
    fn constant_gradient_step_size_approaches_lr() {
        let mut store = ParamStore::new();
        let id = store.insert("w", array![[0.0]]).unwrap();
        let cfg = AdamConfig::default();
        let mut adam = AdamState::new(cfg, &store);
        let mut prev = 0.0;
        let mut last_delta = 0.0;
        for _ in 0..2000 {
            store.grad_mut(id)[[0, 0]] = 3.0; // constant positive gradient
            adam.step(&mut store);
            let now = store.value(id)[[0, 0]];
            last_delta = now - prev;
            prev = now;
        }
        // moves against the gradient with |Δ| → lr
        assert!(last_delta < 0.0);
        assert_abs_diff_eq!(last_delta.abs(), cfg.lr, epsilon = 1e-5);
    }
}
