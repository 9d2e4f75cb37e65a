use std::f64::consts::PI;

use crate::critic::{predict_atoms, QuantileAtoms};
use crate::envs::Actor;
use crate::error::{Error, Result};
use crate::nn::MlpParams;
use crate::rng::Rng;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian policy with a state-independent, trainable log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mean: MlpParams,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new(mean: MlpParams, log_std: Vec<f64>) -> Result<Self> {
        if log_std.len() != mean.output_dim() {
            return Err(Error::Config(format!(
                "log_std has {} entries for a {}-dim action",
                log_std.len(),
                mean.output_dim()
            )));
        }
        let mut p = Self { mean, log_std };
        p.clamp_log_std();
        Ok(p)
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn clamp_log_std(&mut self) {
        self.log_std
            .iter_mut()
            .for_each(|s| *s = s.clamp(LOG_STD_MIN, LOG_STD_MAX));
    }

    pub fn num_params(&self) -> usize {
        self.mean.num_params() + self.log_std.len()
    }

    /// Log-density of `action` given the network mean.
    pub fn log_prob_at(&self, mean: &[f64], action: &[f64]) -> f64 {
        mean.iter()
            .zip(action)
            .zip(&self.log_std)
            .map(|((m, a), ls)| {
                let z = (a - m) / ls.exp();
                -0.5 * z * z - ls - HALF_LN_2PI
            })
            .sum()
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        let mean = self.mean.predict(obs)?;
        Ok(self.log_prob_at(&mean, action))
    }

    /// Differential entropy; independent of the state.
    pub fn entropy(&self) -> f64 {
        self.log_std
            .iter()
            .map(|ls| ls + 0.5 * (2.0 * PI * std::f64::consts::E).ln())
            .sum()
    }
}

impl Actor for GaussianPolicy {
    fn act(&self, obs: &[f64], rng: &mut Rng, deterministic: bool) -> Result<(Vec<f64>, f64)> {
        let mean = self.mean.predict(obs)?;
        let action: Vec<f64> = if deterministic {
            mean.clone()
        } else {
            mean.iter()
                .zip(&self.log_std)
                .map(|(m, ls)| m + ls.exp() * rng.standard_normal())
                .collect()
        };
        let lp = self.log_prob_at(&mean, &action);
        Ok((action, lp))
    }
}

/// Policy and quantile critic parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub policy: GaussianPolicy,
    pub critic: MlpParams,
}

impl ActorCritic {
    /// Fresh networks: policy output layer scaled by 0.01.
    pub fn init(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        num_atoms: usize,
        init_log_std: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        let mut policy_sizes = sizes.clone();
        policy_sizes.push(act_dim);
        sizes.push(num_atoms);
        let mean = MlpParams::init(&policy_sizes, 0.01, &mut rng.child("policy"))?;
        let critic = MlpParams::init(&sizes, 1.0, &mut rng.child("critic"))?;
        Ok(Self {
            policy: GaussianPolicy::new(mean, vec![init_log_std; act_dim])?,
            critic,
        })
    }

    pub fn num_params(&self) -> usize {
        self.policy.num_params() + self.critic.num_params()
    }

    /// Flat order: policy mean network, log-std, critic network.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.policy.mean.flatten_into(&mut out);
        out.extend_from_slice(&self.policy.log_std);
        self.critic.flatten_into(&mut out);
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Internal(format!(
                "flat vector has {} entries, agent has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let np = self.policy.mean.num_params();
        let na = self.policy.log_std.len();
        self.policy.mean.assign_flat(&flat[..np]);
        self.policy.log_std.copy_from_slice(&flat[np..np + na]);
        self.critic.assign_flat(&flat[np + na..]);
        Ok(())
    }

    pub fn atoms(&self, obs: &[f64]) -> Result<QuantileAtoms> {
        predict_atoms(&self.critic, obs)
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.atoms(obs)?.mean())
    }

    /// Order-sensitive checksum of every parameter bit.
    pub fn checksum(&self) -> u64 {
        self.flatten().iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
            (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01B3)
        })
    }
}
