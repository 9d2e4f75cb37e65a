use std::path::Path;

use momentppo_core::stability::{sample_variance, variance_alignment};
use momentppo_core::{Algo, AlignmentReport, Rng};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::run::{checkpoint_id, load_checkpoint, measure, run, RunManifest, SeedStatus, MANIFEST_FILE};
use crate::CliError;

pub const SWEEP_FILE: &str = "alignment_sweep.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointAlignment {
    pub checkpoint_id: String,
    pub step: u64,
    pub return_variance: f64,
    pub value_variance: f64,
    pub value_level: AlignmentReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub algo: Algo,
    pub seed: u64,
    pub checkpoints: Vec<CheckpointAlignment>,
    pub variance_level: Option<AlignmentReport>,
    pub notice: Option<String>,
}

/// Reuses the manifest in `output_dir` when it belongs to this config and
/// all its checkpoints exist; otherwise trains first.
fn ensure_trained(cfg: &ExperimentConfig, progress: &mut impl FnMut(&str)) -> Result<RunManifest, CliError> {
    let root = &cfg.output_dir;
    if let Ok(m) = RunManifest::load(&root.join(MANIFEST_FILE)) {
        let complete = m.runs.iter().all(|r| r.artifacts.checkpoints.iter().all(|c| root.join(c).is_file()));
        if m.config_hash == cfg.hash() && complete {
            return Ok(m);
        }
    }
    progress("no matching training run found; training first");
    run(cfg, &mut *progress)
}

/// Value-level alignment at every saved checkpoint of every seed, plus one
/// variance-level alignment across checkpoints when there are at least
/// three. Writes `alignment_sweep.json` to the output directory.
pub fn sweep_alignment(cfg: &ExperimentConfig, mut progress: impl FnMut(&str)) -> Result<Vec<SweepReport>, CliError> {
    cfg.validate()?;
    let manifest = ensure_trained(cfg, &mut progress)?;
    let root = cfg.output_dir.as_path();
    let mut reports = Vec::new();
    for record in &manifest.runs {
        if matches!(record.status, SeedStatus::Aborted { .. }) {
            continue;
        }
        progress(&format!(
            "{} seed {}: sweeping {} checkpoints",
            record.algo,
            record.seed,
            record.artifacts.checkpoints.len()
        ));
        reports.push(sweep_seed(cfg, root, record.algo, record.seed, &record.artifacts.checkpoints)?);
    }
    let mut text = serde_json::to_string_pretty(&reports).expect("sweep serializes");
    text.push('\n');
    let path = root.join(SWEEP_FILE);
    std::fs::write(&path, text).map_err(|e| CliError::Io { path, source: e })?;
    Ok(reports)
}

fn sweep_seed(cfg: &ExperimentConfig, root: &Path, algo: Algo, seed: u64, files: &[String]) -> Result<SweepReport, CliError> {
    let mut entries = Vec::new();
    let mut dists = Vec::new();
    for f in files {
        let ck = load_checkpoint(root, f)?;
        let id = checkpoint_id(ck.step);
        let m = measure(cfg, algo, seed, &id, &ck.state)?;
        entries.push(CheckpointAlignment {
            checkpoint_id: id,
            step: ck.step,
            return_variance: sample_variance(&m.distributions.returns()),
            value_variance: sample_variance(&m.distributions.values()),
            value_level: m.alignment,
        });
        dists.push(m.distributions);
    }
    let (variance_level, notice) = if dists.len() >= 3 {
        let mut rng = Rng::derive(seed, "sweep/variance");
        (Some(variance_alignment(&dists, cfg.stability.permutations, &mut rng)?), None)
    } else {
        let msg = format!(
            "variance-level alignment needs at least 3 checkpoints, found {}; section omitted",
            dists.len()
        );
        (None, Some(msg))
    };
    Ok(SweepReport { algo, seed, checkpoints: entries, variance_level, notice })
}
