use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::critic::DEFAULT_ATOMS;
use crate::error::{Error, Result};

/// Which return distribution the Landscape-PPO penalties are computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LandscapeSource {
    /// Per-state critic atoms.
    #[default]
    Critic,
    /// Returns of the episodes completed in the current rollout.
    EpisodeReturns,
}

/// PPO hyperparameters, including every penalty weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub lr: f64,
    pub epochs: usize,
    pub rollout_len: usize,
    pub minibatch_size: usize,
    /// Skewness advantage penalty (dppo-skew).
    pub w_skew: f64,
    /// Kurtosis advantage penalty (dppo-kurt).
    pub w_kurt: f64,
    pub lambda_cvar: f64,
    pub lambda_kurt: f64,
    pub lambda_skew: f64,
    pub cvar_alpha: f64,
    pub landscape_source: LandscapeSource,
    pub entropy_coef: f64,
    pub critic_coef: f64,
    pub max_grad_norm: f64,
    pub advantage_standardization: bool,
    pub num_atoms: usize,
    pub huber_kappa: f64,
    pub hidden_sizes: Vec<usize>,
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            lr: 3e-4,
            epochs: 4,
            rollout_len: 2048,
            minibatch_size: 64,
            w_skew: 0.1,
            w_kurt: 0.1,
            lambda_cvar: 0.1,
            lambda_kurt: 0.01,
            lambda_skew: 0.01,
            cvar_alpha: 0.1,
            landscape_source: LandscapeSource::Critic,
            entropy_coef: 0.0,
            critic_coef: 0.5,
            max_grad_norm: 0.5,
            advantage_standardization: true,
            num_atoms: DEFAULT_ATOMS,
            huber_kappa: 0.1,
            hidden_sizes: vec![64, 64],
            init_log_std: 0.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            problems.push(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            problems.push(format!("gae_lambda must lie in [0, 1], got {}", self.gae_lambda));
        }
        if !(self.clip_eps > 0.0) {
            problems.push(format!("clip_eps must be positive, got {}", self.clip_eps));
        }
        if !(self.lr >= 0.0) {
            problems.push(format!("lr must be non-negative, got {}", self.lr));
        }
        for (name, w) in [
            ("w_skew", self.w_skew),
            ("w_kurt", self.w_kurt),
            ("lambda_cvar", self.lambda_cvar),
            ("lambda_kurt", self.lambda_kurt),
            ("lambda_skew", self.lambda_skew),
            ("entropy_coef", self.entropy_coef),
            ("critic_coef", self.critic_coef),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                problems.push(format!("{name} must be a finite value >= 0, got {w}"));
            }
        }
        if !(self.cvar_alpha > 0.0 && self.cvar_alpha <= 1.0) {
            problems.push(format!("cvar_alpha must lie in (0, 1], got {}", self.cvar_alpha));
        }
        if !(self.max_grad_norm > 0.0) {
            problems.push(format!("max_grad_norm must be positive, got {}", self.max_grad_norm));
        }
        if self.epochs == 0 || self.rollout_len == 0 || self.minibatch_size == 0 {
            problems.push("epochs, rollout_len and minibatch_size must be positive".into());
        }
        if self.minibatch_size > self.rollout_len {
            problems.push(format!(
                "minibatch_size {} exceeds rollout_len {}",
                self.minibatch_size, self.rollout_len
            ));
        }
        if self.num_atoms == 0 {
            problems.push("num_atoms must be positive".into());
        }
        if !(self.huber_kappa > 0.0) {
            problems.push(format!("huber_kappa must be positive, got {}", self.huber_kappa));
        }
        if self.hidden_sizes.contains(&0) {
            problems.push("hidden_sizes entries must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Algorithm variants. Each one is a restriction of [`PpoConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Ppo,
    Dppo,
    DppoKurt,
    DppoSkew,
    LandscapePpo,
    Crs,
}

impl Algo {
    pub const ALL: [Algo; 6] = [
        Algo::Ppo,
        Algo::Dppo,
        Algo::DppoKurt,
        Algo::DppoSkew,
        Algo::LandscapePpo,
        Algo::Crs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Ppo => "ppo",
            Algo::Dppo => "dppo",
            Algo::DppoKurt => "dppo-kurt",
            Algo::DppoSkew => "dppo-skew",
            Algo::LandscapePpo => "landscape-ppo",
            Algo::Crs => "crs",
        }
    }

    /// Zeroes the weights this variant does not use. `ppo` and `crs` use a
    /// single-atom (scalar) critic.
    pub fn resolve(self, cfg: &PpoConfig) -> PpoConfig {
        let mut c = cfg.clone();
        let keep_landscape = self == Algo::LandscapePpo;
        if !keep_landscape {
            c.lambda_cvar = 0.0;
            c.lambda_kurt = 0.0;
            c.lambda_skew = 0.0;
        }
        match self {
            Algo::Ppo | Algo::Crs => {
                c.num_atoms = 1;
                c.w_skew = 0.0;
                c.w_kurt = 0.0;
            }
            Algo::Dppo | Algo::LandscapePpo => {
                c.w_skew = 0.0;
                c.w_kurt = 0.0;
            }
            Algo::DppoKurt => c.w_skew = 0.0,
            Algo::DppoSkew => c.w_kurt = 0.0,
        }
        c
    }

    pub fn uses_crs(self) -> bool {
        self == Algo::Crs
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}
