use serde::{Deserialize, Serialize};

use super::MlpParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self::with_config(num_params, AdamConfig::default())
    }

    pub fn with_config(num_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }

    /// One bias-corrected Adam step. Returns the new parameters and state;
    /// `self` and `params` are left untouched.
    pub fn step(&self, params: &[f64], grad: &[f64], lr: f64) -> Result<(Vec<f64>, AdamState)> {
        if grad.len() != self.len() || params.len() != self.len() {
            return Err(Error::Usage(format!(
                "adam state has {} entries, got params {} and gradient {}",
                self.len(),
                params.len(),
                grad.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient component {i} is {}; update rejected",
                grad[i]
            )));
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step_count + 1;
        let bc1 = 1.0 - beta1.powi(t as i32);
        let bc2 = 1.0 - beta2.powi(t as i32);
        let mut next = self.clone();
        next.step_count = t;
        let mut out = params.to_vec();
        for i in 0..out.len() {
            let g = grad[i];
            let m = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
            let v = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
            next.first_moment[i] = m;
            next.second_moment[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            out[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok((out, next))
    }
}

/// Adam step applied to a network.
pub fn adam_step(
    state: &AdamState,
    params: &MlpParams,
    gradient: &[f64],
    lr: f64,
) -> Result<(MlpParams, AdamState)> {
    let (flat, next) = state.step(&params.flatten(), gradient, lr)?;
    let mut p = params.clone();
    p.assign_flat(&flat);
    Ok((p, next))
}
