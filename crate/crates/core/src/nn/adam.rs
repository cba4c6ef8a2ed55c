use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        self.step_slice(&mut params.values, &grads.values)
    }

    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape("adam step", &[self.m.len()], &[params.len(), grads.len()]));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("adam gradient"));
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - libm::pow(beta1, t);
        let bc2 = 1.0 - libm::pow(beta2, t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= learning_rate * m_hat / (libm::sqrt(v_hat) + epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> ModelParams {
        ModelParams {
            values: vec![v],
            layout: Vec::new(),
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = AdamState::new(1, AdamConfig::with_learning_rate(1e-4));
        let mut p = scalar(1.0);
        s.step(&mut p, &scalar(2.0)).unwrap();
        assert!((p.values[0] - (1.0 - 1e-4)).abs() < 1e-10);
        assert_eq!(s.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut s = AdamState::new(3, AdamConfig::default());
        let mut p = ModelParams {
            values: vec![1.0, -2.0, 0.5],
            layout: Vec::new(),
        };
        let before = p.clone();
        s.step(&mut p, &ModelParams::zeros_like(&before)).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.steps(), 1);
    }

    #[test]
    fn rejects_non_finite_gradient_and_length_mismatch() {
        let mut s = AdamState::new(1, AdamConfig::default());
        let mut p = scalar(0.0);
        assert_eq!(
            s.step(&mut p, &scalar(f64::NAN)),
            Err(Error::NonFinite("adam gradient"))
        );
        assert!(s.step_slice(&mut [0.0, 1.0], &[0.0, 0.0]).is_err());
    }

    /// Textbook Adam written out separately, for f(x) = x^2.
    fn reference_trajectory(x0: f64, lr: f64, steps: usize) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        let mut out = Vec::new();
        for t in 1..=steps {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            x -= lr * mh / (vh.sqrt() + eps);
            out.push(x);
        }
        out
    }

    #[test]
    fn three_step_quadratic_trajectory_matches_reference() {
        let expected = reference_trajectory(1.5, 0.1, 3);
        let mut s = AdamState::new(1, AdamConfig::with_learning_rate(0.1));
        let mut p = scalar(1.5);
        for e in expected {
            let g = scalar(2.0 * p.values[0]);
            s.step(&mut p, &g).unwrap();
            assert!((p.values[0] - e).abs() < 1e-14);
        }
        assert!(s.second_moment().iter().all(|&v| v >= 0.0));
    }
}
