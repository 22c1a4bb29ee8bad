//! Adam with linear warmup and global-norm gradient clipping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamStore};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            base_lr: 2e-5,
            warmup_steps: 1000,
            clip_norm: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamConfig,
    /// Number of updates applied so far.
    pub step: u64,
    pub first_moment: BTreeMap<String, Matrix>,
    pub second_moment: BTreeMap<String, Matrix>,
}

/// `base_lr · min(1, step / warmup_steps)`.
pub fn lr_schedule(config: &AdamConfig, step: u64) -> f64 {
    if config.warmup_steps == 0 {
        return config.base_lr;
    }
    config.base_lr * (step as f64 / config.warmup_steps as f64).min(1.0)
}

/// Scales `grads` in place so their global norm is at most `clip_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, clip_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if clip_norm > 0.0 && norm > clip_norm {
        grads.scale(clip_norm / norm);
    }
    norm
}

impl OptimizerState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = |_: &str, m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        let moments: BTreeMap<String, Matrix> = params
            .iter()
            .filter(|(n, _)| params.is_trainable(n))
            .map(|(n, m)| (n.to_string(), zeros(n, m)))
            .collect();
        Self {
            config,
            step: 0,
            first_moment: moments.clone(),
            second_moment: moments,
        }
    }

    /// Learning rate the next update will use.
    pub fn current_lr(&self) -> f64 {
        lr_schedule(&self.config, self.step + 1)
    }

    /// Clips, then applies one bias-corrected Adam update. Returns
    /// `(pre-clip gradient norm, learning rate used)`.
    pub fn update(&mut self, params: &mut ParamStore, grads: &mut Gradients) -> (f64, f64) {
        let norm = clip_global_norm(grads, self.config.clip_norm);
        self.step += 1;
        let lr = lr_schedule(&self.config, self.step);
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (name, g) in &grads.tensors {
            let Some(p) = params.get_mut(name) else { continue };
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            let v = self
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        (norm, lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_is_linear_then_flat() {
        let c = AdamConfig::default();
        assert!((lr_schedule(&c, 500) - 1e-5).abs() < 1e-20);
        assert_eq!(lr_schedule(&c, 1000), 2e-5);
        assert_eq!(lr_schedule(&c, 5000), 2e-5);
        assert!((lr_schedule(&c, 1) - 2e-8).abs() < 1e-22);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut store = ParamStore::new();
        store.insert("a", Matrix::zeros(1, 2));
        let mut g = Gradients::zeros_like(&store);
        g.tensors.insert("a".into(), Matrix::from_vec(1, 2, vec![3.0, 4.0]));
        let before = clip_global_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        assert!(g.global_norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut store = ParamStore::new();
        store.insert("a", Matrix::from_vec(1, 2, vec![0.3, -0.7]));
        let before = store.clone();
        let mut state = OptimizerState::new(AdamConfig::default(), &store);
        let mut g = Gradients::zeros_like(&store);
        state.update(&mut store, &mut g);
        assert_eq!(store, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut store = ParamStore::new();
        store.insert("a", Matrix::from_vec(1, 1, vec![1.0]));
        let config = AdamConfig {
            base_lr: 0.1,
            warmup_steps: 0,
            ..AdamConfig::default()
        };
        let mut state = OptimizerState::new(config, &store);
        let mut g = Gradients::zeros_like(&store);
        g.tensors.insert("a".into(), Matrix::scalar(0.5));
        state.update(&mut store, &mut g);
        // Bias-corrected first step is lr · g / (|g| + eps).
        assert!((store.expect("a").to_scalar() - 0.9).abs() < 1e-6);
    }
}
