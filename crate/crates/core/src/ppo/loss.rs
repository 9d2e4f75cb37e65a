//! Policy and critic losses with exact gradients.

use super::batch::RolloutBatch;
use super::config::{LandscapeSource, PpoConfig};
use super::policy::GaussianPolicy;
use crate::critic::{cvar_of_samples, quantile_huber_loss, QuantileAtoms};
use crate::error::{Error, Result};
use crate::nn::{mlp_forward, MlpParams};

/// Clipped-surrogate loss over a minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateOutput {
    pub loss: f64,
    /// Gradient in policy flat order (mean network, then log-std).
    pub grad: Vec<f64>,
    /// Samples dropped because their probability ratio was not finite.
    pub excluded: usize,
    pub mean_ratio: f64,
}

/// Per-sample clipped objective `min(r A, clip(r, 1-eps, 1+eps) A)` and
/// its derivative with respect to `r`.
pub fn clipped_objective(ratio: f64, adv: f64, clip_eps: f64) -> (f64, f64) {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    let unclipped_obj = ratio * adv;
    let clipped_obj = clipped * adv;
    if unclipped_obj <= clipped_obj {
        (unclipped_obj, adv)
    } else {
        (clipped_obj, 0.0)
    }
}

fn surrogate_with_shift(
    batch: &RolloutBatch,
    indices: &[usize],
    policy: &GaussianPolicy,
    clip_eps: f64,
    entropy_coef: f64,
    // Advantage offset for the k-th listed sample.
    shift: impl Fn(usize) -> f64,
) -> Result<SurrogateOutput> {
    let n_mean = policy.mean.num_params();
    let act_dim = policy.act_dim();
    let mut grad = vec![0.0; n_mean + act_dim];
    let stds: Vec<f64> = policy.log_std.iter().map(|s| s.exp()).collect();
    let mut per_sample = Vec::with_capacity(indices.len());
    let mut excluded = 0;
    let mut obj_sum = 0.0;
    let mut ratio_sum = 0.0;
    for (k, &i) in indices.iter().enumerate() {
        let (mean, cache) = mlp_forward(&policy.mean, &batch.obs[i])?;
        let action = &batch.actions[i];
        let lp = policy.log_prob_at(&mean, action);
        let ratio = (lp - batch.old_log_probs[i]).exp();
        if !ratio.is_finite() {
            excluded += 1;
            continue;
        }
        let adv = batch.advantages[i] + shift(k);
        let (obj, d_ratio) = clipped_objective(ratio, adv, clip_eps);
        obj_sum += obj;
        ratio_sum += ratio;
        per_sample.push((cache, mean, i, d_ratio * ratio));
    }
    let n = per_sample.len();
    if n == 0 {
        return Ok(SurrogateOutput {
            loss: -entropy_coef * policy.entropy(),
            grad,
            excluded,
            mean_ratio: f64::NAN,
        });
    }
    let inv_n = 1.0 / n as f64;
    // d loss / d log_prob = -(dObj/dr * r) / n
    let mut out_grad = vec![0.0; act_dim];
    for (cache, mean, i, d_lp) in &per_sample {
        let scale = -d_lp * inv_n;
        if scale == 0.0 {
            continue;
        }
        let action = &batch.actions[*i];
        for d in 0..act_dim {
            let diff = action[d] - mean[d];
            out_grad[d] = scale * diff / (stds[d] * stds[d]);
            let z = diff / stds[d];
            grad[n_mean + d] += scale * (z * z - 1.0);
        }
        policy.mean.accumulate_backward(cache, &out_grad, &mut grad[..n_mean])?;
    }
    for d in 0..act_dim {
        grad[n_mean + d] -= entropy_coef;
    }
    Ok(SurrogateOutput {
        loss: -obj_sum * inv_n - entropy_coef * policy.entropy(),
        grad,
        excluded,
        mean_ratio: ratio_sum * inv_n,
    })
}

/// `-mean_t min(r_t A_t, clip(r_t) A_t) - entropy_coef * entropy`.
pub fn ppo_surrogate(
    batch: &RolloutBatch,
    indices: &[usize],
    policy: &GaussianPolicy,
    clip_eps: f64,
    entropy_coef: f64,
) -> Result<SurrogateOutput> {
    surrogate_with_shift(batch, indices, policy, clip_eps, entropy_coef, |_| 0.0)
}

/// Penalty statistics of one return distribution.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LandscapeTerms {
    pub cvar: f64,
    pub mean: f64,
    pub kurtosis: f64,
    pub skewness: f64,
}

impl LandscapeTerms {
    pub fn of_samples(samples: &[f64], alpha: f64) -> Result<Self> {
        let atoms = QuantileAtoms::new(samples.to_vec())?;
        let m = atoms.moments();
        Ok(Self {
            cvar: cvar_of_samples(samples, alpha)?,
            mean: m.mean,
            kurtosis: m.kurtosis,
            skewness: m.skewness,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeOutput {
    /// Surrogate loss plus the penalty terms.
    pub loss: f64,
    pub surrogate: SurrogateOutput,
    /// `lambda_cvar * mean(-CVaR)`.
    pub cvar_penalty: f64,
    /// `lambda_kurt * mean(Kurt)`.
    pub kurt_penalty: f64,
    /// `lambda_skew * mean(|Skew|)`.
    pub skew_penalty: f64,
}

/// Landscape-PPO loss.
///
/// The penalties depend only on the critic, so they shift the reported loss
/// without a gradient path to the policy; the CVaR term instead reaches the
/// policy through `A_t <- A_t + lambda_cvar (CVaR(s_t) - mean(s_t))`.
pub fn landscape_ppo_loss(
    batch: &RolloutBatch,
    indices: &[usize],
    policy: &GaussianPolicy,
    cfg: &PpoConfig,
) -> Result<LandscapeOutput> {
    let any_penalty = cfg.lambda_cvar != 0.0 || cfg.lambda_kurt != 0.0 || cfg.lambda_skew != 0.0;
    if !any_penalty {
        let surrogate = ppo_surrogate(batch, indices, policy, cfg.clip_eps, cfg.entropy_coef)?;
        return Ok(LandscapeOutput {
            loss: surrogate.loss,
            surrogate,
            cvar_penalty: 0.0,
            kurt_penalty: 0.0,
            skew_penalty: 0.0,
        });
    }
    let terms: Vec<LandscapeTerms> = match cfg.landscape_source {
        LandscapeSource::Critic => indices
            .iter()
            .map(|&i| {
                let atoms = batch.atoms.get(i).ok_or_else(|| {
                    Error::Usage(format!("no critic atoms recorded for sample {i}"))
                })?;
                LandscapeTerms::of_samples(atoms.atoms(), cfg.cvar_alpha)
            })
            .collect::<Result<_>>()?,
        LandscapeSource::EpisodeReturns => {
            let t = if batch.episode_returns.is_empty() {
                LandscapeTerms::default()
            } else {
                LandscapeTerms::of_samples(&batch.episode_returns, cfg.cvar_alpha)?
            };
            vec![t; indices.len()]
        }
    };
    let surrogate = surrogate_with_shift(batch, indices, policy, cfg.clip_eps, cfg.entropy_coef, |k| {
        cfg.lambda_cvar * (terms[k].cvar - terms[k].mean)
    })?;
    let n = terms.len().max(1) as f64;
    let cvar_penalty = cfg.lambda_cvar * terms.iter().map(|t| -t.cvar).sum::<f64>() / n;
    let kurt_penalty = cfg.lambda_kurt * terms.iter().map(|t| t.kurtosis).sum::<f64>() / n;
    let skew_penalty = cfg.lambda_skew * terms.iter().map(|t| t.skewness.abs()).sum::<f64>() / n;
    Ok(LandscapeOutput {
        loss: surrogate.loss + cvar_penalty + kurt_penalty + skew_penalty,
        surrogate,
        cvar_penalty,
        kurt_penalty,
        skew_penalty,
    })
}

/// Mean quantile-Huber loss of the critic against each state's return target.
pub fn critic_loss(
    batch: &RolloutBatch,
    indices: &[usize],
    critic: &MlpParams,
    kappa: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; critic.num_params()];
    if indices.is_empty() {
        return Ok((0.0, grad));
    }
    let inv_n = 1.0 / indices.len() as f64;
    let mut loss = 0.0;
    for &i in indices {
        let (out, cache) = mlp_forward(critic, &batch.obs[i])?;
        let atoms = QuantileAtoms::new(out)?;
        let (l, g) = quantile_huber_loss(&atoms, &[batch.value_targets[i]], kappa)?;
        loss += l * inv_n;
        let g: Vec<f64> = g.iter().map(|v| v * inv_n).collect();
        critic.accumulate_backward(&cache, &g, &mut grad)?;
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_arithmetic() {
        assert_eq!(clipped_objective(1.5, 1.0, 0.2).0, 1.2);
        assert_eq!(clipped_objective(1.5, 1.0, 0.2).1, 0.0);
        assert_eq!(clipped_objective(0.5, -1.0, 0.2).0, -0.8);
        assert_eq!(clipped_objective(1.0, 2.0, 0.2), (2.0, 2.0));
        // Pessimistic branch keeps the gradient when clipping would help.
        assert_eq!(clipped_objective(0.5, 1.0, 0.2), (0.5, 1.0));
    }
}
