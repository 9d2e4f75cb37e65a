//! Seeded stochastic environments.
//!
//! * `bandit`: one state, one step, reward from a Gaussian mixture. Its return
//!   distribution is known, which makes it the reference task for the
//!   distributional critic.
//! * `pointmass`: 1-D double integrator with process noise and optional
//!   heavy-tailed reward noise.
//! * `pendulum`: torque-limited swing-up with torque noise.
//!
//! Episodes have a fixed horizon; actions are clamped to `[-1, 1]`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditParams {
    pub components: Vec<MixtureComponent>,
}

impl Default for BanditParams {
    fn default() -> Self {
        Self {
            components: vec![
                MixtureComponent { weight: 0.7, mean: 0.0, std: 1.0 },
                MixtureComponent { weight: 0.3, mean: 4.0, std: 1.0 },
            ],
        }
    }
}

impl BanditParams {
    /// Draws one reward. Always consumes exactly two draws.
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let u = rng.uniform();
        let z = rng.standard_normal();
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        let mut acc = 0.0;
        let last = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight / total;
            if u < acc || i == last {
                return c.mean + c.std * z;
            }
        }
        unreachable!("validated non-empty mixture")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointmassParams {
    pub dt: f64,
    pub accel_scale: f64,
    /// Std of the velocity process noise.
    pub sigma_n: f64,
    /// Adds reward noise `0.95 N(0, 0.05) + 0.05 N(0, 1)`.
    pub heavy_tail: bool,
    pub action_cost: f64,
    pub horizon: usize,
    /// Initial position is uniform in `[-init_range, init_range]`.
    pub init_range: f64,
}

impl Default for PointmassParams {
    fn default() -> Self {
        Self {
            dt: 0.05,
            accel_scale: 3.0,
            sigma_n: 0.05,
            heavy_tail: false,
            action_cost: 0.1,
            horizon: 100,
            init_range: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumParams {
    pub gravity: f64,
    pub length: f64,
    pub mass: f64,
    pub dt: f64,
    pub torque_scale: f64,
    pub torque_noise: f64,
    pub max_speed: f64,
    pub horizon: usize,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            gravity: 10.0,
            length: 1.0,
            mass: 1.0,
            dt: 0.05,
            torque_scale: 2.0,
            torque_noise: 0.05,
            max_speed: 8.0,
            horizon: 200,
        }
    }
}

/// Environment selection plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum EnvSpec {
    Bandit(BanditParams),
    Pointmass(PointmassParams),
    Pendulum(PendulumParams),
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec::Pointmass(PointmassParams::default())
    }
}

impl EnvSpec {
    /// Default parameters for a named environment.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "bandit" => Ok(EnvSpec::Bandit(BanditParams::default())),
            "pointmass" => Ok(EnvSpec::Pointmass(PointmassParams::default())),
            "pendulum" => Ok(EnvSpec::Pendulum(PendulumParams::default())),
            other => Err(Error::Config(format!(
                "unknown environment `{other}` (expected bandit, pointmass or pendulum)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvSpec::Bandit(_) => "bandit",
            EnvSpec::Pointmass(_) => "pointmass",
            EnvSpec::Pendulum(_) => "pendulum",
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            EnvSpec::Bandit(_) => 1,
            EnvSpec::Pointmass(_) => 2,
            EnvSpec::Pendulum(_) => 3,
        }
    }

    pub fn act_dim(&self) -> usize {
        1
    }

    pub fn horizon(&self) -> usize {
        match self {
            EnvSpec::Bandit(_) => 1,
            EnvSpec::Pointmass(p) => p.horizon,
            EnvSpec::Pendulum(p) => p.horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match self {
            EnvSpec::Bandit(b) => {
                if b.components.is_empty() {
                    return bad("bandit needs at least one mixture component".into());
                }
                for (i, c) in b.components.iter().enumerate() {
                    if !(c.weight > 0.0) || !(c.std >= 0.0) || !c.mean.is_finite() {
                        return bad(format!("bandit component {i} is invalid: {c:?}"));
                    }
                }
            }
            EnvSpec::Pointmass(p) => {
                if p.horizon == 0 || !(p.dt > 0.0) || !(p.sigma_n >= 0.0) || !(p.init_range >= 0.0) {
                    return bad(format!("invalid pointmass parameters: {p:?}"));
                }
            }
            EnvSpec::Pendulum(p) => {
                if p.horizon == 0 || !(p.dt > 0.0) || !(p.length > 0.0) || !(p.mass > 0.0) || !(p.torque_noise >= 0.0) {
                    return bad(format!("invalid pendulum parameters: {p:?}"));
                }
            }
        }
        Ok(())
    }

    /// Observation fed to the networks.
    pub fn observe(&self, state: &EnvState) -> Vec<f64> {
        match self {
            EnvSpec::Bandit(_) | EnvSpec::Pointmass(_) => state.values.clone(),
            EnvSpec::Pendulum(_) => {
                let (th, om) = (state.values[0], state.values[1]);
                vec![th.cos(), th.sin(), om]
            }
        }
    }
}

/// Internal environment state. For the pendulum `values` is `(theta, omega)`;
/// the observation is derived by [`EnvSpec::observe`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub values: Vec<f64>,
    pub t: usize,
    pub done: bool,
}

impl EnvState {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, t: 0, done: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub reward: f64,
    pub done: bool,
}

fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

pub fn reset(spec: &EnvSpec, rng: &mut Rng) -> EnvState {
    match spec {
        EnvSpec::Bandit(_) => EnvState::new(vec![0.0]),
        EnvSpec::Pointmass(p) => EnvState::new(vec![rng.uniform_range(-p.init_range, p.init_range), 0.0]),
        EnvSpec::Pendulum(_) => EnvState::new(vec![rng.uniform_range(-PI, PI), 0.0]),
    }
}

pub fn step(spec: &EnvSpec, state: &EnvState, action: &[f64], rng: &mut Rng) -> Result<StepOutcome> {
    if state.done {
        return Err(Error::Usage("step called on a finished episode".into()));
    }
    if action.len() != spec.act_dim() {
        return Err(Error::Usage(format!(
            "action has {} components, {} expects {}",
            action.len(),
            spec.name(),
            spec.act_dim()
        )));
    }
    if let Some(a) = action.iter().find(|a| !a.is_finite()) {
        return Err(Error::NonFinite(format!("action component {a}")));
    }
    let a = action[0].clamp(-1.0, 1.0);
    let t = state.t + 1;
    let (values, reward) = match spec {
        EnvSpec::Bandit(b) => (state.values.clone(), b.sample(rng)),
        EnvSpec::Pointmass(p) => {
            let (x, v) = (state.values[0], state.values[1]);
            let eta = p.sigma_n * rng.standard_normal();
            let nx = x + p.dt * v;
            let nv = v + p.dt * (p.accel_scale * a) + eta;
            let mut r = -(x * x + p.action_cost * a * a);
            if p.heavy_tail {
                let u = rng.uniform();
                let z = rng.standard_normal();
                r += if u < 0.95 { 0.05 * z } else { z };
            }
            (vec![nx, nv], r)
        }
        EnvSpec::Pendulum(p) => {
            let (th, om) = (state.values[0], state.values[1]);
            let torque = p.torque_scale * a + p.torque_noise * rng.standard_normal();
            let r = -(wrap_angle(th).powi(2) + 0.1 * om * om + 0.001 * a * a);
            let acc = 3.0 * p.gravity / (2.0 * p.length) * th.sin()
                + 3.0 / (p.mass * p.length * p.length) * torque;
            let nom = (om + acc * p.dt).clamp(-p.max_speed, p.max_speed);
            let nth = th + nom * p.dt;
            (vec![nth, nom], r)
        }
    };
    let done = t >= spec.horizon();
    if !reward.is_finite() {
        return Err(Error::NonFinite(format!("{} produced reward {reward}", spec.name())));
    }
    Ok(StepOutcome {
        next_state: EnvState { values, t, done },
        reward,
        done,
    })
}

/// Something that maps an observation to `(action, log_prob)`.
pub trait Actor {
    fn act(&self, obs: &[f64], rng: &mut Rng, deterministic: bool) -> Result<(Vec<f64>, f64)>;
}

impl<F> Actor for F
where
    F: Fn(&[f64], &mut Rng, bool) -> (Vec<f64>, f64),
{
    fn act(&self, obs: &[f64], rng: &mut Rng, deterministic: bool) -> Result<(Vec<f64>, f64)> {
        Ok(self(obs, rng, deterministic))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    /// Action as produced by the policy, before clamping.
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    /// Undiscounted sum of rewards.
    pub episodic_return: f64,
}

pub fn rollout(spec: &EnvSpec, actor: &impl Actor, rng: &mut Rng, deterministic: bool) -> Result<Episode> {
    let start = reset(spec, rng);
    rollout_from(spec, start, actor, rng, deterministic)
}

/// Runs one episode from a given start state.
pub fn rollout_from(
    spec: &EnvSpec,
    start: EnvState,
    actor: &impl Actor,
    rng: &mut Rng,
    deterministic: bool,
) -> Result<Episode> {
    let mut state = start;
    let mut transitions = Vec::with_capacity(spec.horizon());
    let mut total = 0.0;
    while !state.done {
        let obs = spec.observe(&state);
        let (action, log_prob) = actor.act(&obs, rng, deterministic)?;
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite(format!(
                "policy returned action {action:?} at t={}; rollout aborted",
                state.t
            )));
        }
        let out = step(spec, &state, &action, rng)?;
        total += out.reward;
        transitions.push(Transition {
            obs,
            action,
            log_prob,
            reward: out.reward,
            done: out.done,
        });
        state = out.next_state;
    }
    Ok(Episode {
        transitions,
        episodic_return: total,
    })
}

/// Quantile levels at bin midpoints, `(2j - 1) / (2k)` for `j = 1..=k`.
pub fn midpoint_taus(k: usize) -> Vec<f64> {
    (1..=k).map(|j| (2 * j - 1) as f64 / (2 * k) as f64).collect()
}

/// Monte-Carlo quantiles of the bandit reward law at midpoint levels.
pub fn bandit_true_quantiles(params: &BanditParams, k: usize, mc_samples: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Usage("k must be at least 1".into()));
    }
    if mc_samples < 100_000 {
        return Err(Error::Usage(format!("mc_samples must be >= 1e5, got {mc_samples}")));
    }
    EnvSpec::Bandit(params.clone()).validate()?;
    let mut draws: Vec<f64> = (0..mc_samples).map(|_| params.sample(rng)).collect();
    draws.sort_unstable_by(f64::total_cmp);
    let n = draws.len();
    Ok(midpoint_taus(k)
        .into_iter()
        .map(|tau| draws[((tau * n as f64) as usize).min(n - 1)])
        .collect())
}

/// Writes one decimal per line, shortest round-trip formatting.
pub fn write_quantile_file(path: &Path, values: &[f64]) -> Result<()> {
    let mut out = String::new();
    for v in values {
        writeln!(out, "{v:?}").expect("writing to String");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_quantile_file(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad quantile `{l}`: {e}")))
        })
        .collect()
}
