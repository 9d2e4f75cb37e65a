use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use momentppo_core::Algo;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::run::{RunManifest, SeedStatus, StabilityRecord};
use crate::CliError;

/// One seed's contribution to the comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    /// Identifies the environment including its parameters.
    pub env_key: String,
    pub env_name: String,
    pub algo: Algo,
    /// `(sigma, final_return)`, or `None` when the artifacts are missing.
    pub result: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub env: String,
    pub algo: Algo,
    /// Seeds with usable stability artifacts.
    pub seeds: usize,
    pub final_return_mean: f64,
    pub final_return_std: f64,
    pub sigma_mean: f64,
    /// `100 (sigma_ppo - sigma) / sigma_ppo` when the environment has a PPO row.
    pub reduction_vs_ppo_pct: Option<f64>,
    pub lowest_sigma: bool,
    pub incomplete: bool,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn reduction_pct(baseline: f64, sigma: f64) -> f64 {
    100.0 * (baseline - sigma) / baseline
}

/// Groups seed summaries by (environment, algorithm) and flags the lowest
/// mean sigma per environment.
pub fn summarize(seeds: &[SeedSummary]) -> Vec<CompareRow> {
    let mut env_order: Vec<&str> = Vec::new();
    let mut names: BTreeMap<&str, String> = BTreeMap::new();
    for s in seeds {
        if !env_order.contains(&s.env_key.as_str()) {
            env_order.push(&s.env_key);
        }
        names.entry(&s.env_key).or_insert_with(|| s.env_name.clone());
    }
    // Distinct parameterizations of the same environment get a hash suffix.
    let label = |key: &str| {
        let name = &names[key];
        let shared = names.iter().filter(|(_, n)| *n == name).count() > 1;
        if shared {
            let h: String = Sha256::digest(key.as_bytes()).iter().take(4).map(|b| format!("{b:02x}")).collect();
            format!("{name}-{h}")
        } else {
            name.clone()
        }
    };
    let mut rows = Vec::new();
    for key in env_order {
        let mut env_rows: Vec<CompareRow> = Vec::new();
        for algo in Algo::ALL {
            let group: Vec<&SeedSummary> = seeds.iter().filter(|s| s.env_key == key && s.algo == algo).collect();
            if group.is_empty() {
                continue;
            }
            let ok: Vec<(f64, f64)> = group.iter().filter_map(|s| s.result).collect();
            let sigmas: Vec<f64> = ok.iter().map(|r| r.0).collect();
            let finals: Vec<f64> = ok.iter().map(|r| r.1).collect();
            env_rows.push(CompareRow {
                env: label(key),
                algo,
                seeds: ok.len(),
                final_return_mean: if ok.is_empty() { f64::NAN } else { mean(&finals) },
                final_return_std: std(&finals),
                sigma_mean: if ok.is_empty() { f64::NAN } else { mean(&sigmas) },
                reduction_vs_ppo_pct: None,
                lowest_sigma: false,
                incomplete: ok.len() < group.len(),
            });
        }
        let best = env_rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.seeds > 0)
            .min_by(|a, b| a.1.sigma_mean.total_cmp(&b.1.sigma_mean))
            .map(|(i, _)| i);
        if let Some(i) = best {
            env_rows[i].lowest_sigma = true;
        }
        let baseline = env_rows
            .iter()
            .find(|r| r.algo == Algo::Ppo && r.seeds > 0 && r.sigma_mean > 0.0)
            .map(|r| r.sigma_mean);
        if let Some(b) = baseline {
            for r in env_rows.iter_mut().filter(|r| r.algo != Algo::Ppo && r.seeds > 0) {
                r.reduction_vs_ppo_pct = Some(reduction_pct(b, r.sigma_mean));
            }
        }
        rows.extend(env_rows);
    }
    rows
}

fn read_stability(root: &Path, relative: &str) -> Option<StabilityRecord> {
    let text = std::fs::read_to_string(root.join(relative)).ok()?;
    serde_json::from_str(&text).ok()
}

/// Seed summaries of one manifest; unreadable artifacts become `None`.
pub fn manifest_summaries(path: &Path) -> Result<Vec<SeedSummary>, CliError> {
    let m = RunManifest::load(path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let env_key = serde_json::to_string(&m.config.env).expect("env serializes");
    Ok(m.runs
        .iter()
        .map(|r| SeedSummary {
            env_key: env_key.clone(),
            env_name: m.config.env.name().to_string(),
            algo: r.algo,
            result: match (&r.status, &r.artifacts.stability) {
                (SeedStatus::Completed, Some(rel)) => {
                    read_stability(&root, rel).map(|s| (s.sigma, s.final_return))
                }
                _ => None,
            },
        })
        .collect())
}

pub fn compare(manifests: &[PathBuf]) -> Result<Vec<CompareRow>, CliError> {
    if manifests.is_empty() {
        return Err(CliError::Invalid(vec!["compare needs at least one manifest".into()]));
    }
    let mut all = Vec::new();
    for p in manifests {
        all.extend(manifest_summaries(p)?);
    }
    Ok(summarize(&all))
}

pub const COMPARE_HEADER: &str =
    "env,algo,seeds,final_return_mean,final_return_std,sigma_mean,reduction_vs_ppo_pct,lowest_sigma,incomplete";

pub fn render_csv(rows: &[CompareRow]) -> String {
    let mut out = format!("{COMPARE_HEADER}\n");
    for r in rows {
        let red = r.reduction_vs_ppo_pct.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.env,
            r.algo,
            r.seeds,
            r.final_return_mean,
            r.final_return_std,
            r.sigma_mean,
            red,
            r.lowest_sigma,
            r.incomplete
        )
        .unwrap();
    }
    out
}

/// Aligned table; `*` marks the lowest sigma in each environment.
pub fn render_text(rows: &[CompareRow]) -> String {
    let header = ["env", "algo", "seeds", "final return", "sigma", "vs ppo", ""];
    let cells: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.env.clone(),
                r.algo.to_string(),
                r.seeds.to_string(),
                format!("{:.3} ± {:.3}", r.final_return_mean, r.final_return_std),
                format!("{:.4}{}", r.sigma_mean, if r.lowest_sigma { " *" } else { "" }),
                r.reduction_vs_ppo_pct.map(|v| format!("{v:.1}%")).unwrap_or_else(|| "-".into()),
                if r.incomplete { "incomplete".into() } else { String::new() },
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |fields: Vec<&str>| {
        let padded: Vec<String> = fields
            .iter()
            .zip(&widths)
            .map(|(f, w)| format!("{f}{}", " ".repeat(w - f.chars().count())))
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    for row in &cells {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}
