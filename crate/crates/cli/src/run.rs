use std::fs;
use std::path::{Path, PathBuf};

use momentppo_core::ppo::Collector;
use momentppo_core::stability::{evaluate_returns, sample_post_update, stability_sigma, value_alignment};
use momentppo_core::train::{collect_finalized, metrics_csv};
use momentppo_core::{
    train, AgentState, Algo, AlignmentReport, Checkpoint, PostUpdateDistributions, Rng, RunStatus, TrainOutcome,
    TrainSchedule,
};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const TOOL_NAME: &str = "momentppo";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Contents of `stability.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    /// Sample standard deviation of the post-update returns.
    pub sigma: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "E")]
    pub e: usize,
    pub checkpoint_id: String,
    /// Mean deterministic return of the measured checkpoint.
    pub final_return: f64,
    pub invalid_forks: usize,
}

/// Everything measured at one checkpoint.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub distributions: PostUpdateDistributions,
    pub alignment: AlignmentReport,
    pub stability: StabilityRecord,
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub algo: Algo,
    pub seed: u64,
    pub training: TrainOutcome,
    /// Present when training completed.
    pub measurement: Option<Measurement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum SeedStatus {
    Completed,
    Diverged { step: u64, reason: String },
    Aborted { reason: String },
}

/// Artifact paths relative to the manifest directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedArtifacts {
    pub metrics: Option<String>,
    pub checkpoints: Vec<String>,
    pub post_update: Option<String>,
    pub alignment: Option<String>,
    pub stability: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub algo: Algo,
    pub seed: u64,
    #[serde(flatten)]
    pub status: SeedStatus,
    pub artifacts: SeedArtifacts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub runs: Vec<SeedRecord>,
}

impl RunManifest {
    pub fn all_completed(&self) -> bool {
        self.runs.iter().all(|r| r.status == SeedStatus::Completed)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
        serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
    }
}

pub fn checkpoint_id(step: u64) -> String {
    format!("step-{step}")
}

/// Post-update distributions, alignment and final return of `state`.
///
/// All randomness comes from streams derived from `seed` and the checkpoint
/// id, so a checkpoint measured during `run` and again during a sweep gives
/// the same numbers.
pub fn measure(cfg: &ExperimentConfig, algo: Algo, seed: u64, id: &str, state: &AgentState) -> Result<Measurement, CliError> {
    let ppo = algo.resolve(&cfg.ppo);
    let root = Rng::derive(seed, &format!("measure/{id}"));
    let mut collector = Collector::new(cfg.env.clone(), root.child("rollout"))?;
    let batch = collect_finalized(&mut collector, state, &ppo)?;
    let distributions = sample_post_update(state, &batch, &cfg.env, &ppo, &cfg.stability, id, &root)?;
    let alignment = value_alignment(&distributions, cfg.stability.permutations, &mut root.child("permutation"))?;
    let finals = evaluate_returns(
        &cfg.env,
        &state.params.policy,
        cfg.final_eval_episodes,
        &mut Rng::derive(seed, "final-eval"),
    )?;
    let stability = StabilityRecord {
        sigma: stability_sigma(&distributions),
        n: distributions.samples.len(),
        e: distributions.eval_episodes,
        checkpoint_id: id.to_string(),
        final_return: finals.iter().sum::<f64>() / finals.len() as f64,
        invalid_forks: distributions.invalid,
    };
    Ok(Measurement { distributions, alignment, stability })
}

/// Trains one (algorithm, seed) pair and measures its final checkpoint.
pub fn run_seed(cfg: &ExperimentConfig, algo: Algo, seed: u64) -> Result<SeedResult, CliError> {
    let schedule = TrainSchedule {
        total_steps: cfg.total_steps,
        checkpoint_interval: cfg.checkpoint_interval,
    };
    let training = train(&cfg.env, algo, &cfg.ppo, &cfg.stability, schedule, seed)?;
    let measurement = match training.status {
        RunStatus::Completed => {
            let last = training.final_checkpoint();
            Some(measure(cfg, algo, seed, &checkpoint_id(last.step), &last.state)?)
        }
        RunStatus::Diverged { .. } => None,
    };
    Ok(SeedResult { algo, seed, training, measurement })
}

pub fn seed_dir(algo: Algo, seed: u64) -> PathBuf {
    PathBuf::from(algo.as_str()).join(seed.to_string())
}

fn rel(path: &Path) -> String {
    path.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn write(root: &Path, relative: &Path, contents: &str) -> Result<String, CliError> {
    let full = root.join(relative);
    if let Some(parent) = full.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::Io { path: parent.to_path_buf(), source: e })?;
    }
    fs::write(&full, contents).map_err(|e| CliError::Io { path: full.clone(), source: e })?;
    Ok(rel(relative))
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes to JSON");
    s.push('\n');
    s
}

/// Writes one seed's artifacts under `root` and returns their record.
pub fn write_seed(root: &Path, result: &SeedResult) -> Result<SeedRecord, CliError> {
    let dir = seed_dir(result.algo, result.seed);
    let mut artifacts = SeedArtifacts {
        metrics: Some(write(root, &dir.join("metrics.csv"), &metrics_csv(&result.training.metrics))?),
        ..Default::default()
    };
    for ck in &result.training.checkpoints {
        let name = format!("{}.ckpt", checkpoint_id(ck.step));
        artifacts.checkpoints.push(write(root, &dir.join("checkpoints").join(name), &ck.to_text())?);
    }
    if let Some(m) = &result.measurement {
        artifacts.post_update = Some(write(root, &dir.join("post_update.csv"), &m.distributions.to_csv())?);
        artifacts.alignment = Some(write(root, &dir.join("alignment.json"), &json(&m.alignment))?);
        artifacts.stability = Some(write(root, &dir.join("stability.json"), &json(&m.stability))?);
    }
    let status = match &result.training.status {
        RunStatus::Completed => SeedStatus::Completed,
        RunStatus::Diverged { step, reason } => SeedStatus::Diverged { step: *step, reason: reason.clone() },
    };
    Ok(SeedRecord { algo: result.algo, seed: result.seed, status, artifacts })
}

fn manifest(cfg: &ExperimentConfig, runs: Vec<SeedRecord>) -> RunManifest {
    RunManifest {
        tool: TOOL_NAME.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        runs,
    }
}

/// Runs the whole algorithm x seed matrix, writing artifacts and
/// `manifest.json` under `cfg.output_dir`. A seed that fails is recorded and
/// the remaining seeds still run.
pub fn run(cfg: &ExperimentConfig, mut progress: impl FnMut(&str)) -> Result<RunManifest, CliError> {
    cfg.validate()?;
    let root = &cfg.output_dir;
    let mut runs = Vec::new();
    for &algo in &cfg.algos {
        for &seed in &cfg.seeds {
            progress(&format!("{algo} seed {seed}: training {} steps", cfg.total_steps));
            let record = match run_seed(cfg, algo, seed) {
                Ok(result) => write_seed(root, &result)?,
                Err(e @ CliError::Io { .. }) => return Err(e),
                Err(e) => SeedRecord {
                    algo,
                    seed,
                    status: SeedStatus::Aborted { reason: e.to_string() },
                    artifacts: SeedArtifacts::default(),
                },
            };
            let status = match &record.status {
                SeedStatus::Completed => "completed".to_string(),
                SeedStatus::Diverged { step, reason } => format!("diverged at step {step}: {reason}"),
                SeedStatus::Aborted { reason } => format!("aborted: {reason}"),
            };
            progress(&format!("{algo} seed {seed}: {status}"));
            runs.push(record);
        }
    }
    let m = manifest(cfg, runs);
    write(root, Path::new(MANIFEST_FILE), &json(&m))?;
    Ok(m)
}

/// Reads a checkpoint artifact listed in a manifest.
pub fn load_checkpoint(root: &Path, relative: &str) -> Result<Checkpoint, CliError> {
    let path = root.join(relative);
    let text = fs::read_to_string(&path).map_err(|e| CliError::Io { path: path.clone(), source: e })?;
    Ok(Checkpoint::from_text(&text)?)
}
