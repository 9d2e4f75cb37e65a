use super::config::PpoConfig;
use super::gae::{compute_gae, discounted_returns, standardize};
use super::policy::ActorCritic;
use crate::critic::QuantileAtoms;
use crate::envs::{reset, step, Actor, EnvSpec, EnvState};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// One rollout of on-policy experience plus the quantities PPO derives from it.
///
/// `value_targets` holds the discounted reward-to-go used to train the
/// critic. Minibatches are index sets into these aligned sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub old_log_probs: Vec<f64>,
    pub atoms: Vec<QuantileAtoms>,
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
    /// Critic mean at the state following the last step.
    pub bootstrap_value: f64,
    /// Undiscounted returns of episodes that finished inside this rollout.
    pub episode_returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.atoms.iter().map(QuantileAtoms::mean).collect()
    }

    /// Fills `advantages` (GAE, optionally standardized, then moment
    /// penalties) and `value_targets`.
    pub fn finalize(&mut self, cfg: &PpoConfig) -> Result<()> {
        let values = self.values();
        let (mut adv, _) = compute_gae(
            &self.rewards,
            &values,
            &self.dones,
            self.bootstrap_value,
            cfg.gamma,
            cfg.gae_lambda,
        )?;
        if cfg.advantage_standardization {
            standardize(&mut adv);
        }
        self.advantages = adv;
        self.value_targets = discounted_returns(&self.rewards, &self.dones, self.bootstrap_value, cfg.gamma);
        regularize_advantages_in_place(self, cfg.w_skew, cfg.w_kurt);
        if let Some(i) = self.advantages.iter().position(|a| !a.is_finite()) {
            return Err(Error::NonFinite(format!("advantage {i} is {}", self.advantages[i])));
        }
        Ok(())
    }
}

/// `A_t <- A_t - w_skew Skew(Z(s_t)) - w_kurt Kurt(Z(s_t))`.
pub fn regularize_advantages(mut batch: RolloutBatch, w_skew: f64, w_kurt: f64) -> RolloutBatch {
    regularize_advantages_in_place(&mut batch, w_skew, w_kurt);
    batch
}

pub(crate) fn regularize_advantages_in_place(batch: &mut RolloutBatch, w_skew: f64, w_kurt: f64) {
    if w_skew == 0.0 && w_kurt == 0.0 {
        return;
    }
    for (a, atoms) in batch.advantages.iter_mut().zip(&batch.atoms) {
        let m = atoms.moments();
        *a = *a - w_skew * m.skewness - w_kurt * m.kurtosis;
    }
}

/// Steps an environment across rollouts, keeping the unfinished episode.
#[derive(Debug, Clone)]
pub struct Collector {
    env: EnvSpec,
    state: EnvState,
    running_return: f64,
    rng: Rng,
}

impl Collector {
    pub fn new(env: EnvSpec, mut rng: Rng) -> Result<Self> {
        env.validate()?;
        let state = reset(&env, &mut rng);
        Ok(Self {
            env,
            state,
            running_return: 0.0,
            rng,
        })
    }

    pub fn env(&self) -> &EnvSpec {
        &self.env
    }

    /// Collects `len` stochastic-policy steps. Advantages are left empty.
    pub fn collect(&mut self, agent: &ActorCritic, len: usize) -> Result<RolloutBatch> {
        let mut b = RolloutBatch {
            obs: Vec::with_capacity(len),
            actions: Vec::with_capacity(len),
            rewards: Vec::with_capacity(len),
            dones: Vec::with_capacity(len),
            old_log_probs: Vec::with_capacity(len),
            atoms: Vec::with_capacity(len),
            advantages: Vec::new(),
            value_targets: Vec::new(),
            bootstrap_value: 0.0,
            episode_returns: Vec::new(),
        };
        for _ in 0..len {
            let obs = self.env.observe(&self.state);
            let (action, log_prob) = agent.policy.act(&obs, &mut self.rng, false)?;
            let out = step(&self.env, &self.state, &action, &mut self.rng)?;
            b.atoms.push(agent.atoms(&obs)?);
            b.obs.push(obs);
            b.actions.push(action);
            b.rewards.push(out.reward);
            b.dones.push(out.done);
            b.old_log_probs.push(log_prob);
            self.running_return += out.reward;
            if out.done {
                b.episode_returns.push(self.running_return);
                self.running_return = 0.0;
                self.state = reset(&self.env, &mut self.rng);
            } else {
                self.state = out.next_state;
            }
        }
        if b.dones.last() == Some(&false) {
            b.bootstrap_value = agent.value(&self.env.observe(&self.state))?;
        }
        Ok(b)
    }
}

/// `count` minibatches of `size` indices drawn by repeated shuffles of
/// `0..len`, without replacement inside each shuffle.
pub fn draw_minibatches(len: usize, size: usize, count: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if size == 0 || size > len {
        return Err(Error::Usage(format!(
            "minibatch size {size} incompatible with rollout length {len}"
        )));
    }
    let per_shuffle = len / size;
    let mut out = Vec::with_capacity(count);
    let mut perm: Vec<usize> = (0..len).collect();
    while out.len() < count {
        rng.shuffle(&mut perm);
        for chunk in perm.chunks_exact(size).take(per_shuffle) {
            if out.len() == count {
                break;
            }
            out.push(chunk.to_vec());
        }
    }
    Ok(out)
}
