use serde::{Deserialize, Serialize};

use super::NumError;

/// Adam hyperparameters. The optimizer choice is fixed; these defaults are
/// local decisions and every field can be overridden through configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state: first and second moment estimates plus the step counter.
/// Each state has exactly one owner; `update` mutates it and the parameter
/// array in place.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(param_count: usize, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// One bias-corrected Adam update applied to `params` in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NumError> {
        if params.len() != self.first_moment.len() {
            return Err(NumError::LengthMismatch {
                op: "AdamState::update: params",
                expected: self.first_moment.len(),
                actual: params.len(),
            });
        }
        if grads.len() != self.first_moment.len() {
            return Err(NumError::LengthMismatch {
                op: "AdamState::update: grads",
                expected: self.first_moment.len(),
                actual: grads.len(),
            });
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, epsilon } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            let m = &mut self.first_moment[i];
            *m = beta1 * *m + (1.0 - beta1) * g;
            let v = &mut self.second_moment[i];
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut state = AdamState::new(3, AdamConfig::default());
        let mut params = vec![0.5, -1.0, 2.0];
        let before = params.clone();
        state.update(&mut params, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step_count(), 1);
        // Stays a fixed point over repeated steps.
        for _ in 0..5 {
            state.update(&mut params, &[0.0; 3]).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let config = AdamConfig::default();
        let mut state = AdamState::new(4, config);
        let mut params = vec![1.0, 1.0, 1.0, 1.0];
        let grads = [3.0, -0.25, 1e4, -7.0];
        state.update(&mut params, &grads).unwrap();
        for (i, g) in grads.iter().enumerate() {
            let moved = params[i] - 1.0;
            // Bias-corrected first step: delta = -lr * g / (|g| + eps).
            assert!(
                (moved + config.lr * g.signum()).abs() < 1e-6,
                "param {i} moved {moved}"
            );
        }
    }

    #[test]
    fn matches_reference_adam_loop_on_quadratic() {
        // Independently coded reference loop for f(x) = 0.5 * sum(x^2),
        // following the canonical bias-corrected update step by step.
        let config = AdamConfig::default();
        let n = 5;
        let start: Vec<f64> = (0..n).map(|i| (i as f64) - 2.0 + 0.3).collect();

        let mut params = start.clone();
        let mut state = AdamState::new(n, config);
        for _ in 0..10 {
            let grads: Vec<f64> = params.clone();
            state.update(&mut params, &grads).unwrap();
        }

        let mut reference = start;
        let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
        for t in 1..=10 {
            let grads: Vec<f64> = reference.clone();
            for i in 0..n {
                m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grads[i];
                v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grads[i] * grads[i];
                let m_hat = m[i] / (1.0 - config.beta1.powi(t));
                let v_hat = v[i] / (1.0 - config.beta2.powi(t));
                reference[i] -= config.lr * m_hat / (v_hat.sqrt() + config.epsilon);
            }
        }

        for (a, b) in params.iter().zip(reference.iter()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut state = AdamState::new(3, AdamConfig::default());
        let mut params = vec![0.0; 3];
        let err = state.update(&mut params, &[0.0; 2]).unwrap_err();
        assert!(matches!(err, NumError::LengthMismatch { .. }));
        let mut short = vec![0.0; 2];
        let err = state.update(&mut short, &[0.0; 3]).unwrap_err();
        assert!(matches!(err, NumError::LengthMismatch { .. }));
    }
}
