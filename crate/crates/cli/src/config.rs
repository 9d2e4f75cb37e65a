use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use momentppo_core::{Algo, EnvSpec, PpoConfig, StabilityConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Environment variable that replaces `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "MOMENTPPO_OUTPUT_DIR";

/// One experiment: every algorithm in `algos` is trained on `env` for every
/// seed in `seeds`.
///
/// ```toml
/// algos = ["ppo", "dppo-kurt"]
/// seeds = [1, 2, 3]
/// total_steps = 200000
/// output_dir = "runs/pointmass"
///
/// [env]
/// name = "pointmass"
/// heavy_tail = true
///
/// [ppo]
/// w_kurt = 0.1
///
/// [stability]
/// n_forks = 256
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algos: Vec<Algo>,
    pub seeds: Vec<u64>,
    pub total_steps: u64,
    /// Environment steps between saved checkpoints; 0 saves only the
    /// initial and final parameters.
    pub checkpoint_interval: u64,
    /// Deterministic episodes used for the reported final return.
    pub final_eval_episodes: usize,
    pub output_dir: PathBuf,
    pub env: EnvSpec,
    pub ppo: PpoConfig,
    pub stability: StabilityConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algos: vec![Algo::Ppo],
            seeds: vec![0],
            total_steps: 200_000,
            checkpoint_interval: 0,
            final_eval_episodes: 32,
            output_dir: PathBuf::from("runs"),
            env: EnvSpec::default(),
            ppo: PpoConfig::default(),
            stability: StabilityConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Reads, applies the output-directory override and validates.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.apply_output_override(std::env::var(OUTPUT_DIR_ENV).ok());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_output_override(&mut self, dir: Option<String>) {
        if let Some(d) = dir.filter(|d| !d.is_empty()) {
            self.output_dir = PathBuf::from(d);
        }
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        if self.seeds.is_empty() {
            problems.push("seeds: must list at least one seed".to_string());
        }
        let distinct: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            problems.push("seeds: must be distinct".to_string());
        }
        if self.algos.is_empty() {
            problems.push("algos: must list at least one algorithm".to_string());
        }
        let distinct: BTreeSet<&str> = self.algos.iter().map(|a| a.as_str()).collect();
        if distinct.len() != self.algos.len() {
            problems.push("algos: must be distinct".to_string());
        }
        if self.final_eval_episodes == 0 {
            problems.push("final_eval_episodes: must be positive".to_string());
        }
        if self.output_dir.as_os_str().is_empty() {
            problems.push("output_dir: must not be empty".to_string());
        }
        for (section, result) in [
            ("env", self.env.validate()),
            ("ppo", self.ppo.validate()),
            ("stability", self.stability.validate()),
        ] {
            match result {
                Ok(()) => {}
                Err(momentppo_core::Error::Config(msg)) => {
                    problems.extend(msg.split("; ").map(|m| format!("{section}.{m}")));
                }
                Err(e) => problems.push(format!("{section}: {e}")),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Invalid(problems))
        }
    }

    /// SHA-256 of the resolved config. `output_dir` is left out so the same
    /// experiment hashes identically wherever it is written.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("config serializes to JSON");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
