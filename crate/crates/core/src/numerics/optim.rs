//! Adaptive-moment optimizer with global-norm clipping.

use super::params::ParamStore;
use super::Matrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-4, clip_norm: Some(1000.0) }
    }
}

/// Diagnostics from one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub grad_norm: f64,
    pub clipped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

/// Euclidean norm over all gradient matrices.
pub fn global_norm(grads: &[Matrix]) -> f64 {
    grads.iter().map(Matrix::frobenius_sq).sum::<f64>().sqrt()
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || store.values().iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
        Self { config, step: 0, first: zeros(), second: zeros() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Matrix], &[Matrix]) {
        (&self.first, &self.second)
    }

    /// Restore counters and moments (checkpoint loading).
    pub fn restore(&mut self, step: u64, first: Vec<Matrix>, second: Vec<Matrix>) {
        assert_eq!(first.len(), self.first.len(), "moment count");
        assert_eq!(second.len(), self.second.len(), "moment count");
        self.step = step;
        self.first = first;
        self.second = second;
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Matrix]) -> StepInfo {
        assert_eq!(grads.len(), store.len(), "one gradient per parameter");
        let grad_norm = global_norm(grads);
        let scale = match self.config.clip_norm {
            Some(c) if grad_norm > c => c / grad_norm,
            _ => 1.0,
        };
        let clipped = scale < 1.0;
        if self.config.learning_rate == 0.0 || !grad_norm.is_finite() {
            return StepInfo { grad_norm, clipped };
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon, .. } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (k, g) in grads.iter().enumerate() {
            let m = self.first[k].as_mut_slice();
            let v = self.second[k].as_mut_slice();
            let p = store.values_mut()[k].as_mut_slice();
            for i in 0..g.len() {
                let gi = g.as_slice()[i] * scale;
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= learning_rate * mh / (vh.sqrt() + epsilon);
            }
        }
        StepInfo { grad_norm, clipped }
    }
}
