use serde::{Deserialize, Serialize};

use super::{Gradients, ValueNet};
use crate::error::{Error, Result};
use crate::hyper::OptimizerConfig;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(config: OptimizerConfig, num_params: usize) -> Self {
        Self {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update. Non-finite gradients abort the step and leave both
    /// the parameters and the optimizer state untouched.
    pub fn step(&mut self, net: &mut ValueNet, grads: &Gradients) -> Result<()> {
        let g = grads.as_slice();
        if g.len() != net.num_params() || self.m.len() != g.len() {
            return Err(Error::invalid(format!(
                "gradient has {} entries, network has {}",
                g.len(),
                net.num_params()
            )));
        }
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("gradient entry {i} is {}", g[i])));
        }
        if g.iter().all(|&x| x == 0.0) {
            return Ok(());
        }
        let OptimizerConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((theta, gi), m), v) in net.params_mut().iter_mut().zip(g).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * gi;
            *v = beta2 * *v + (1.0 - beta2) * gi * gi;
            *theta -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + epsilon);
        }
        Ok(())
    }
}
