//! Post-update return and value distributions.
//!
//! From one parameter snapshot, many single-minibatch updates are forked.
//! Each updated policy is evaluated with deterministic actions (environment
//! noise stays on) to give a return sample, and its critic is read on the
//! minibatch states to give a value sample. The spread of the returns is the
//! stability metric; the correlation between the two sets measures how well
//! the critic tracks the returns.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critic::cvar_of_samples;
use crate::envs::{rollout, Actor, EnvSpec};
use crate::error::{Error, Result};
use crate::ppo::{draw_minibatches, update_once, AgentState, PpoConfig, RolloutBatch, UpdateStats};
use crate::rng::Rng;

/// Randomness used when evaluating forked or candidate updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalStreams {
    /// Every fork replays the same evaluation episodes (same initial states
    /// and environment noise), so forks differ only through their minibatch.
    #[default]
    Shared,
    /// Each fork draws its own evaluation episodes.
    PerFork,
}

impl EvalStreams {
    /// Evaluation stream for fork `index` under `rng`.
    pub fn stream(self, rng: &Rng, index: usize) -> Rng {
        match self {
            EvalStreams::Shared => rng.child("eval"),
            EvalStreams::PerFork => rng.child_indexed("eval", index as u64),
        }
    }
}

/// States on which the post-update critic is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueStates {
    /// The fork's own minibatch.
    #[default]
    Minibatch,
    /// A fixed probe set drawn from the rollout, shared by all forks.
    Probe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    /// Number of forked updates N.
    pub n_forks: usize,
    /// Deterministic evaluation episodes E per fork.
    pub eval_episodes: usize,
    /// Candidate updates K per CRS selection.
    pub crs_candidates: usize,
    /// CVaR level used by CRS.
    pub crs_alpha: f64,
    /// Permutations M for p-values.
    pub permutations: usize,
    pub value_states: ValueStates,
    pub probe_states: usize,
    pub eval_streams: EvalStreams,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            n_forks: 256,
            eval_episodes: 8,
            crs_candidates: 8,
            crs_alpha: 0.1,
            permutations: 10_000,
            value_states: ValueStates::Minibatch,
            probe_states: 64,
            eval_streams: EvalStreams::Shared,
        }
    }
}

impl StabilityConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_forks < 2 {
            problems.push(format!("n_forks must be at least 2, got {}", self.n_forks));
        }
        if self.eval_episodes == 0 {
            problems.push("eval_episodes must be positive".to_string());
        }
        if self.crs_candidates == 0 {
            problems.push("crs_candidates must be positive".to_string());
        }
        if !(self.crs_alpha > 0.0 && self.crs_alpha <= 1.0) {
            problems.push(format!("crs_alpha must lie in (0, 1], got {}", self.crs_alpha));
        }
        if self.permutations < 1000 {
            problems.push(format!("permutations must be at least 1000, got {}", self.permutations));
        }
        if self.value_states == ValueStates::Probe && self.probe_states == 0 {
            problems.push("probe_states must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostUpdateSample {
    pub update_id: usize,
    pub post_return: f64,
    pub post_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostUpdateDistributions {
    pub checkpoint_id: String,
    pub samples: Vec<PostUpdateSample>,
    pub eval_episodes: usize,
    pub exploration_off: bool,
    /// Forks dropped because their update or evaluation failed.
    pub invalid: usize,
}

impl PostUpdateDistributions {
    pub fn returns(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.post_return).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.post_value).collect()
    }

    /// `update_id,post_return,post_value` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("update_id,post_return,post_value\n");
        for s in &self.samples {
            out.push_str(&format!("{},{},{}\n", s.update_id, s.post_return, s.post_value));
        }
        out
    }
}

/// Undiscounted returns of `episodes` runs of `actor` with mean actions.
pub fn evaluate_returns(env: &EnvSpec, actor: &impl Actor, episodes: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    (0..episodes)
        .map(|_| rollout(env, actor, rng, true).map(|ep| ep.episodic_return))
        .collect()
}

/// Arithmetic mean; exact for constant input so spreads of identical
/// samples come out as exactly zero.
fn mean(xs: &[f64]) -> f64 {
    match xs.first() {
        Some(&first) if xs.iter().all(|&x| x == first) => first,
        _ => xs.iter().sum::<f64>() / xs.len() as f64,
    }
}

fn fork_sample(
    state: &AgentState,
    batch: &RolloutBatch,
    env: &EnvSpec,
    cfg: &PpoConfig,
    episodes: usize,
    minibatch: &[usize],
    value_idx: &[usize],
    mut eval_rng: Rng,
) -> Result<(f64, f64)> {
    let (next, _) = update_once(state, batch, minibatch, cfg)?;
    let returns = evaluate_returns(env, &next.params.policy, episodes, &mut eval_rng)?;
    let values = value_idx
        .iter()
        .map(|&i| next.params.value(&batch.obs[i]))
        .collect::<Result<Vec<_>>>()?;
    let (r, v) = (mean(&returns), mean(&values));
    if !r.is_finite() || !v.is_finite() {
        return Err(Error::NonFinite(format!("fork produced return {r}, value {v}")));
    }
    Ok((r, v))
}

/// Builds the post-update return and value distributions at `state`.
///
/// Fork `i` applies [`update_once`] on minibatch `i` and is evaluated on a
/// stream derived from `rng` alone, so the result does not depend on
/// execution order.
pub fn sample_post_update(
    state: &AgentState,
    batch: &RolloutBatch,
    env: &EnvSpec,
    cfg: &PpoConfig,
    stab: &StabilityConfig,
    checkpoint_id: &str,
    rng: &Rng,
) -> Result<PostUpdateDistributions> {
    stab.validate()?;
    let minibatches = draw_minibatches(batch.len(), cfg.minibatch_size, stab.n_forks, &mut rng.child("minibatches"))?;
    let probe: Vec<usize> = match stab.value_states {
        ValueStates::Minibatch => Vec::new(),
        ValueStates::Probe => {
            let mut idx: Vec<usize> = (0..batch.len()).collect();
            rng.child("probe").shuffle(&mut idx);
            idx.truncate(stab.probe_states);
            idx
        }
    };
    let results: Vec<Option<PostUpdateSample>> = minibatches
        .par_iter()
        .enumerate()
        .map(|(i, mb)| {
            let value_idx = if probe.is_empty() { mb.as_slice() } else { probe.as_slice() };
            let eval_rng = stab.eval_streams.stream(rng, i);
            fork_sample(state, batch, env, cfg, stab.eval_episodes, mb, value_idx, eval_rng)
                .ok()
                .map(|(post_return, post_value)| PostUpdateSample {
                    update_id: i,
                    post_return,
                    post_value,
                })
        })
        .collect();
    let invalid = results.iter().filter(|r| r.is_none()).count();
    let samples: Vec<PostUpdateSample> = results.into_iter().flatten().collect();
    if samples.len() < 2 {
        return Err(Error::Usage(format!(
            "only {} of {} forks produced valid samples",
            samples.len(),
            stab.n_forks
        )));
    }
    Ok(PostUpdateDistributions {
        checkpoint_id: checkpoint_id.to_string(),
        samples,
        eval_episodes: stab.eval_episodes,
        exploration_off: true,
        invalid,
    })
}

/// Sample standard deviation (N - 1 denominator) of the post-update returns.
pub fn stability_sigma(dist: &PostUpdateDistributions) -> f64 {
    sample_std(&dist.returns())
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn sample_std(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub r: f64,
    /// Set when either input is constant; `r` is then 0.
    pub degenerate: bool,
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::Usage(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Usage("correlation needs at least two points".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Correlation { r: 0.0, degenerate: true });
    }
    Ok(Correlation {
        r: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationTest {
    pub r: f64,
    pub p_value: f64,
    pub degenerate: bool,
    pub permutations: usize,
}

/// Two-sided permutation test of zero correlation:
/// `p = (1 + #{|r_perm| >= |r_obs|}) / (M + 1)`.
pub fn permutation_p_value(x: &[f64], y: &[f64], permutations: usize, rng: &mut Rng) -> Result<PermutationTest> {
    if permutations < 1000 {
        return Err(Error::Usage(format!("need at least 1000 permutations, got {permutations}")));
    }
    let obs = pearson(x, y)?;
    if obs.degenerate {
        return Ok(PermutationTest { r: 0.0, p_value: 1.0, degenerate: true, permutations });
    }
    let threshold = obs.r.abs() * (1.0 - 1e-12);
    let mut shuffled = y.to_vec();
    let mut hits = 0usize;
    for _ in 0..permutations {
        rng.shuffle(&mut shuffled);
        if pearson(x, &shuffled)?.r.abs() >= threshold {
            hits += 1;
        }
    }
    Ok(PermutationTest {
        r: obs.r,
        p_value: (1 + hits) as f64 / (permutations + 1) as f64,
        degenerate: false,
        permutations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignmentMode {
    /// Post-update values against post-update returns at one snapshot.
    ValueLevel,
    /// Variance of returns against variance of values across snapshots.
    VarianceLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    #[serde(rename = "r")]
    pub pearson_r: f64,
    #[serde(rename = "p")]
    pub p_value: f64,
    pub n: usize,
    pub mode: AlignmentMode,
    pub degenerate: bool,
}

fn report(x: &[f64], y: &[f64], mode: AlignmentMode, permutations: usize, rng: &mut Rng) -> Result<AlignmentReport> {
    let t = permutation_p_value(x, y, permutations, rng)?;
    Ok(AlignmentReport {
        pearson_r: t.r,
        p_value: t.p_value,
        n: x.len(),
        mode,
        degenerate: t.degenerate,
    })
}

/// Correlation of post-update values with post-update returns.
pub fn value_alignment(dist: &PostUpdateDistributions, permutations: usize, rng: &mut Rng) -> Result<AlignmentReport> {
    report(&dist.values(), &dist.returns(), AlignmentMode::ValueLevel, permutations, rng)
}

/// Correlation of the return variance with the value variance across at
/// least three snapshots.
pub fn variance_alignment(
    dists: &[PostUpdateDistributions],
    permutations: usize,
    rng: &mut Rng,
) -> Result<AlignmentReport> {
    if dists.len() < 3 {
        return Err(Error::Usage(format!(
            "variance-level alignment needs at least 3 checkpoints, got {}",
            dists.len()
        )));
    }
    let ret_var: Vec<f64> = dists.iter().map(|d| sample_variance(&d.returns())).collect();
    let val_var: Vec<f64> = dists.iter().map(|d| sample_variance(&d.values())).collect();
    report(&ret_var, &val_var, AlignmentMode::VarianceLevel, permutations, rng)
}

/// Index and CVaR of the candidate with the highest lower-tail CVaR of its
/// return samples. `None` entries are invalid candidates; ties go to the
/// lower index.
pub fn select_by_cvar(candidates: &[Option<Vec<f64>>], alpha: f64) -> Result<Option<(usize, f64)>> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let Some(returns) = c else { continue };
        if returns.is_empty() || returns.iter().any(|r| !r.is_finite()) {
            continue;
        }
        let v = cvar_of_samples(returns, alpha)?;
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    Ok(best)
}

#[derive(Debug, Clone)]
pub struct CrsOutcome {
    pub state: AgentState,
    pub stats: Option<UpdateStats>,
    /// `None` when every candidate failed and the input state was kept.
    pub selected: Option<usize>,
    pub cvars: Vec<Option<f64>>,
}

/// CVaR rejection sampling over `k` candidate updates.
#[allow(clippy::too_many_arguments)]
pub fn crs_select_update(
    state: &AgentState,
    batch: &RolloutBatch,
    env: &EnvSpec,
    cfg: &PpoConfig,
    k: usize,
    eval_episodes: usize,
    alpha: f64,
    streams: EvalStreams,
    rng: &Rng,
) -> Result<CrsOutcome> {
    if k == 0 {
        return Err(Error::Usage("CRS needs at least one candidate".into()));
    }
    let minibatches = draw_minibatches(batch.len(), cfg.minibatch_size, k, &mut rng.child("minibatches"))?;
    let candidates: Vec<Option<(AgentState, UpdateStats, Vec<f64>)>> = minibatches
        .par_iter()
        .enumerate()
        .map(|(i, mb)| {
            let (next, stats) = update_once(state, batch, mb, cfg).ok()?;
            let mut eval_rng = streams.stream(rng, i);
            let returns = evaluate_returns(env, &next.params.policy, eval_episodes, &mut eval_rng).ok()?;
            Some((next, stats, returns))
        })
        .collect();
    let returns: Vec<Option<Vec<f64>>> = candidates.iter().map(|c| c.as_ref().map(|c| c.2.clone())).collect();
    let cvars = returns
        .iter()
        .map(|r| r.as_ref().map(|r| cvar_of_samples(r, alpha)).transpose())
        .collect::<Result<Vec<_>>>()?;
    match select_by_cvar(&returns, alpha)? {
        Some((idx, _)) => {
            let (next, stats, _) = candidates.into_iter().nth(idx).flatten().expect("selected candidate is valid");
            Ok(CrsOutcome { state: next, stats: Some(stats), selected: Some(idx), cvars })
        }
        None => Ok(CrsOutcome { state: state.clone(), stats: None, selected: None, cvars }),
    }
}
