use alloc::vec;
use alloc::vec::Vec;

use libm::{pow, sqrt};

/// Bias-corrected adaptive-moment optimizer without weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: vec![0.0; param_count],
            second: vec![0.0; param_count],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.first.len(), "optimizer state does not match parameters");
        assert_eq!(grads.len(), params.len(), "gradient length does not match parameters");
        self.steps += 1;
        let c1 = 1.0 - pow(self.beta1, self.steps as f64);
        let c2 = 1.0 - pow(self.beta2, self.steps as f64);
        for (((p, &g), m), v) in
            params.iter_mut().zip(grads).zip(self.first.iter_mut()).zip(self.second.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (sqrt(v_hat) + self.eps);
        }
    }
}
