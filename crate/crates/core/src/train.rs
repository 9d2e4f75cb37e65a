//! PPO outer loop shared by every algorithm variant.

use serde::{Deserialize, Serialize};

use crate::critic::QuantileAtoms;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::ppo::{update_once, Algo, AgentState, Checkpoint, Collector, PpoConfig, RolloutBatch, UpdateStats};
use crate::rng::Rng;
use crate::stability::{crs_select_update, sample_std, StabilityConfig};

pub const METRICS_HEADER: &str = "step,episode_return_mean,episode_return_std,loss_total,loss_policy,loss_critic,mean_skew,mean_kurt,mean_cvar,grad_norm";

/// One row per rollout iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub episode_return_mean: f64,
    pub episode_return_std: f64,
    pub loss_total: f64,
    pub loss_policy: f64,
    pub loss_critic: f64,
    pub mean_skew: f64,
    pub mean_kurt: f64,
    pub mean_cvar: f64,
    pub grad_norm: f64,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.episode_return_mean,
            self.episode_return_std,
            self.loss_total,
            self.loss_policy,
            self.loss_critic,
            self.mean_skew,
            self.mean_kurt,
            self.mean_cvar,
            self.grad_norm
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum RunStatus {
    Completed,
    Diverged { step: u64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub total_steps: u64,
    /// Environment steps between checkpoints; 0 keeps only first and last.
    pub checkpoint_interval: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoints: Vec<Checkpoint>,
    pub metrics: Vec<MetricsRow>,
    pub status: RunStatus,
}

impl TrainOutcome {
    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints.last().expect("initial checkpoint always present")
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn atom_summary(atoms: &[QuantileAtoms], alpha: f64) -> Result<(f64, f64, f64)> {
    let mut skew = Vec::with_capacity(atoms.len());
    let mut kurt = Vec::with_capacity(atoms.len());
    let mut cvar = Vec::with_capacity(atoms.len());
    for a in atoms {
        let m = a.moments();
        skew.push(m.skewness);
        kurt.push(m.kurtosis);
        cvar.push(a.cvar(alpha)?);
    }
    Ok((mean(&skew), mean(&kurt), mean(&cvar)))
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFinite(_))
}

/// Collects a rollout and finalizes its advantages for `algo`.
pub fn collect_finalized(collector: &mut Collector, state: &AgentState, cfg: &PpoConfig) -> Result<RolloutBatch> {
    let mut batch = collector.collect(&state.params, cfg.rollout_len)?;
    batch.finalize(cfg)?;
    Ok(batch)
}

/// Trains `algo` on `env` from `seed`.
///
/// Each iteration collects `rollout_len` steps, computes advantages (with the
/// variant's penalties) and runs `epochs` sweeps of minibatch updates; the
/// `crs` variant replaces every update with CVaR rejection sampling. Two
/// consecutive non-finite updates stop the run with a diverged status.
pub fn train(
    env: &EnvSpec,
    algo: Algo,
    ppo: &PpoConfig,
    stab: &StabilityConfig,
    schedule: TrainSchedule,
    seed: u64,
) -> Result<TrainOutcome> {
    let cfg = algo.resolve(ppo);
    cfg.validate()?;
    env.validate()?;
    if algo.uses_crs() {
        stab.validate()?;
    }
    let root = Rng::derive(seed, "train");
    let mut state = AgentState::init(env.obs_dim(), env.act_dim(), &cfg, &root)?;
    let mut collector = Collector::new(env.clone(), root.child("collect"))?;
    let mut shuffle_rng = root.child("epochs");
    let crs_root = root.child("crs");

    let mut checkpoints = vec![Checkpoint { step: 0, state: state.clone() }];
    let mut metrics = Vec::new();
    let mut steps: u64 = 0;
    let mut update_count: u64 = 0;
    let mut consecutive_failures = 0;
    let rollout_len = cfg.rollout_len as u64;
    let mut next_checkpoint = schedule.checkpoint_interval;

    while steps + rollout_len <= schedule.total_steps {
        let batch = match collect_finalized(&mut collector, &state, &cfg) {
            Ok(b) => b,
            Err(e) if is_divergence(&e) => {
                return Ok(diverged(checkpoints, metrics, steps, e));
            }
            Err(e) => return Err(e),
        };
        let mut acc: Vec<UpdateStats> = Vec::new();
        let mut perm: Vec<usize> = (0..batch.len()).collect();
        for _ in 0..cfg.epochs {
            shuffle_rng.shuffle(&mut perm);
            for mb in perm.chunks(cfg.minibatch_size) {
                let result = if algo.uses_crs() {
                    let rng = crs_root.child_indexed("update", update_count);
                    crs_select_update(
                        &state,
                        &batch,
                        env,
                        &cfg,
                        stab.crs_candidates,
                        stab.eval_episodes,
                        stab.crs_alpha,
                        stab.eval_streams,
                        &rng,
                    )
                    .and_then(|o| match o.stats {
                        Some(s) => Ok((o.state, s)),
                        None => Err(Error::NonFinite("every CRS candidate failed".into())),
                    })
                } else {
                    update_once(&state, &batch, mb, &cfg)
                };
                update_count += 1;
                match result {
                    Ok((next, stats)) => {
                        state = next;
                        acc.push(stats);
                        consecutive_failures = 0;
                    }
                    Err(e) if is_divergence(&e) => {
                        consecutive_failures += 1;
                        if consecutive_failures >= 2 {
                            return Ok(diverged(checkpoints, metrics, steps, e));
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        steps += rollout_len;
        let (mean_skew, mean_kurt, mean_cvar) = atom_summary(&batch.atoms, cfg.cvar_alpha)?;
        let avg = |f: fn(&UpdateStats) -> f64| mean(&acc.iter().map(f).collect::<Vec<_>>());
        metrics.push(MetricsRow {
            step: steps,
            episode_return_mean: mean(&batch.episode_returns),
            episode_return_std: if batch.episode_returns.is_empty() {
                f64::NAN
            } else {
                sample_std(&batch.episode_returns)
            },
            loss_total: avg(|s| s.loss_total),
            loss_policy: avg(|s| s.loss_policy),
            loss_critic: avg(|s| s.loss_critic),
            mean_skew,
            mean_kurt,
            mean_cvar,
            grad_norm: avg(|s| s.grad_norm),
        });
        if schedule.checkpoint_interval > 0 && steps >= next_checkpoint {
            checkpoints.push(Checkpoint { step: steps, state: state.clone() });
            while next_checkpoint <= steps {
                next_checkpoint += schedule.checkpoint_interval;
            }
        }
    }
    if checkpoints.last().map(|c| c.step) != Some(steps) {
        checkpoints.push(Checkpoint { step: steps, state });
    }
    Ok(TrainOutcome {
        checkpoints,
        metrics,
        status: RunStatus::Completed,
    })
}

fn diverged(checkpoints: Vec<Checkpoint>, metrics: Vec<MetricsRow>, step: u64, e: Error) -> TrainOutcome {
    TrainOutcome {
        checkpoints,
        metrics,
        status: RunStatus::Diverged { step, reason: e.to_string() },
    }
}
