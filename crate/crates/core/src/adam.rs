//! Adam over a fixed-size parameter vector.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<const N: usize> {
    config: AdamConfig,
    learning_rates: [f64; N],
    m: [f64; N],
    v: [f64; N],
    t: u32,
}

impl<const N: usize> Adam<N> {
    pub fn new(learning_rate: f64, config: AdamConfig) -> Self {
        Self::with_rates([learning_rate; N], config)
    }

    /// Separate step size per coordinate, like optimizer parameter groups.
    pub fn with_rates(learning_rates: [f64; N], config: AdamConfig) -> Self {
        Adam {
            config,
            learning_rates,
            m: [0.0; N],
            v: [0.0; N],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    /// One bias-corrected step that *ascends* `grad`.
    pub fn ascend(&mut self, params: &mut [f64; N], grad: &[f64; N]) {
        self.t += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..N {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] += self.learning_rates[i] * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}
