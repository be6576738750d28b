use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled (AdamW-style) weight decay; 0 disables it.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Moment buffers for one parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// One bias-corrected Adam update of `params` descending along `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::DimensionMismatch {
                context: "AdamState::step",
                expected: self.first_moment.len(),
                got: if grads.len() != self.first_moment.len() {
                    grads.len()
                } else {
                    params.len()
                },
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {i}")));
        }
        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            weight_decay,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.first_moment[i] = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
            self.second_moment[i] = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
            let m_hat = self.first_moment[i] / bc1;
            let v_hat = self.second_moment[i] / bc2;
            if weight_decay != 0.0 {
                params[i] -= learning_rate * weight_decay * params[i];
            }
            params[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut state = AdamState::new(3, AdamConfig::default());
        let mut p = vec![1.0, -2.0, 0.5];
        state.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn constant_gradient_descends() {
        let mut state = AdamState::new(2, AdamConfig::with_lr(0.01));
        let mut p = vec![0.0, 0.0];
        for _ in 0..100 {
            state.step(&mut p, &[3.0, -0.2]).unwrap();
        }
        assert!(p[0] < 0.0 && p[1] > 0.0);
    }

    #[test]
    fn first_step_closed_form() {
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + eps).
        let cfg = AdamConfig::with_lr(0.05);
        let mut state = AdamState::new(3, cfg.clone());
        let grads = [0.4, -3.0, 1e-3];
        let mut p = vec![1.0, 1.0, 1.0];
        state.step(&mut p, &grads).unwrap();
        for (pi, g) in p.iter().zip(grads) {
            let expected = 1.0 - cfg.learning_rate * g / (g.abs() + cfg.epsilon);
            assert!((pi - expected).abs() < 1e-15);
            assert!(((1.0 - pi).abs() - cfg.learning_rate).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_non_finite_and_mismatched() {
        let mut state = AdamState::new(2, AdamConfig::default());
        let mut p = vec![0.0, 0.0];
        assert!(matches!(
            state.step(&mut p, &[f64::NAN, 0.0]),
            Err(Error::NonFinite(_))
        ));
        assert!(state.step(&mut p, &[0.0]).is_err());
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn weight_decay_shrinks_params() {
        let cfg = AdamConfig {
            weight_decay: 0.1,
            ..AdamConfig::with_lr(0.1)
        };
        let mut state = AdamState::new(1, cfg);
        let mut p = vec![2.0];
        state.step(&mut p, &[0.0]).unwrap();
        assert!((p[0] - 1.98).abs() < 1e-15);
    }
}
