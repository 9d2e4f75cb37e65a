use super::batch::RolloutBatch;
use super::config::PpoConfig;
use super::loss::{critic_loss, landscape_ppo_loss};
use super::policy::ActorCritic;
use crate::error::{Error, Result};
use crate::nn::AdamState;
use crate::rng::Rng;

/// Parameters plus optimizer state; everything an update needs.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub params: ActorCritic,
    pub adam: AdamState,
}

impl AgentState {
    pub fn new(params: ActorCritic) -> Self {
        let adam = AdamState::new(params.num_params());
        Self { params, adam }
    }

    /// Fresh agent for an environment, deterministic in `rng`.
    pub fn init(obs_dim: usize, act_dim: usize, cfg: &PpoConfig, rng: &Rng) -> Result<Self> {
        let params = ActorCritic::init(
            obs_dim,
            act_dim,
            &cfg.hidden_sizes,
            cfg.num_atoms,
            cfg.init_log_std,
            &mut rng.child("init"),
        )?;
        Ok(Self::new(params))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub loss_total: f64,
    pub loss_policy: f64,
    pub loss_critic: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub excluded: usize,
    pub cvar_penalty: f64,
    pub kurt_penalty: f64,
    pub skew_penalty: f64,
}

/// One joint actor-critic gradient step on the minibatch `indices`.
///
/// Loss is `policy + critic_coef * critic`, the joint gradient is clipped to
/// `max_grad_norm` and applied with Adam. The input state is not modified.
pub fn update_once(
    state: &AgentState,
    batch: &RolloutBatch,
    indices: &[usize],
    cfg: &PpoConfig,
) -> Result<(AgentState, UpdateStats)> {
    if indices.is_empty() {
        return Err(Error::Usage("empty minibatch".into()));
    }
    if batch.advantages.len() != batch.len() || batch.value_targets.len() != batch.len() {
        return Err(Error::Usage("batch advantages have not been computed".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= batch.len()) {
        return Err(Error::Usage(format!("index {bad} outside batch of {}", batch.len())));
    }
    let params = &state.params;
    let pol = landscape_ppo_loss(batch, indices, &params.policy, cfg)?;
    let (c_loss, c_grad) = critic_loss(batch, indices, &params.critic, cfg.huber_kappa)?;

    let mut grad = pol.surrogate.grad;
    grad.extend(c_grad.iter().map(|g| cfg.critic_coef * g));
    let loss_total = pol.loss + cfg.critic_coef * c_loss;
    if !loss_total.is_finite() {
        return Err(Error::NonFinite(format!("loss is {loss_total}")));
    }
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if grad_norm > cfg.max_grad_norm {
        let scale = cfg.max_grad_norm / grad_norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    let (flat, adam) = state.adam.step(&params.flatten(), &grad, cfg.lr)?;
    let mut next = params.clone();
    next.assign_flat(&flat)?;
    next.policy.clamp_log_std();
    let stats = UpdateStats {
        loss_total,
        loss_policy: pol.surrogate.loss,
        loss_critic: c_loss,
        grad_norm,
        excluded: pol.surrogate.excluded,
        cvar_penalty: pol.cvar_penalty,
        kurt_penalty: pol.kurt_penalty,
        skew_penalty: pol.skew_penalty,
    };
    Ok((AgentState { params: next, adam }, stats))
}
