use serde::{Deserialize, Serialize};

use super::{NnError, Params};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam with bias correction; moments are sized lazily on the first step.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, first_moment: Vec::new(), second_moment: Vec::new(), step_count: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params) -> Result<(), NnError> {
        let n = params.len();
        if grads.len() != n {
            return Err(NnError::DimensionMismatch { expected: n, got: grads.len() });
        }
        if self.first_moment.is_empty() {
            self.first_moment = vec![0.0; n];
            self.second_moment = vec![0.0; n];
        } else if self.first_moment.len() != n {
            return Err(NnError::DimensionMismatch { expected: self.first_moment.len(), got: n });
        }
        self.step_count += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let t = self.step_count as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads.iter()).zip(self.first_moment.iter_mut()).zip(self.second_moment.iter_mut()) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}
