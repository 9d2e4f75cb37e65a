//! End-to-end behaviour of the experiment runner on tiny configurations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use momentppo_cli::compare::{compare, render_text};
use momentppo_cli::run::MANIFEST_FILE;
use momentppo_cli::sweep::SWEEP_FILE;
use momentppo_cli::{run, sweep_alignment, ExperimentConfig, RunManifest, SeedStatus, SweepReport};
use momentppo_core::Algo;

const TINY: &str = r#"
algos = ["ppo", "dppo-kurt"]
seeds = [1, 2, 3]
total_steps = 256
final_eval_episodes = 2

[env]
name = "pointmass"
heavy_tail = true

[ppo]
rollout_len = 128
minibatch_size = 32
epochs = 2
hidden_sizes = [8]
num_atoms = 11

[stability]
n_forks = 6
eval_episodes = 2
crs_candidates = 2
permutations = 1000
"#;

fn tiny(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(TINY).unwrap();
    cfg.output_dir = dir.to_path_buf();
    cfg
}

fn quiet(cfg: &mut ExperimentConfig) {
    cfg.env = ExperimentConfig::from_toml("[env]\nname = \"pointmass\"\nsigma_n = 0.0\n").unwrap().env;
}

const SEED_FILES: [&str; 4] = ["metrics.csv", "post_update.csv", "alignment.json", "stability.json"];

fn read(dir: &Path, rel: &str) -> String {
    fs::read_to_string(dir.join(rel)).unwrap_or_else(|e| panic!("{}: {e}", dir.join(rel).display()))
}

#[test]
fn zero_budget_keeps_initial_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cfg.algos = vec![Algo::Ppo];
    cfg.seeds = vec![1];
    cfg.total_steps = 0;
    let m = run(&cfg, |_| {}).unwrap();
    assert_eq!(m.runs.len(), 1);
    assert_eq!(m.runs[0].status, SeedStatus::Completed);
    assert_eq!(m.runs[0].artifacts.checkpoints, vec!["ppo/1/checkpoints/step-0.ckpt".to_string()]);
    let metrics = read(tmp.path(), "ppo/1/metrics.csv");
    assert_eq!(metrics.lines().count(), 1, "header only");
    assert!(metrics.starts_with("step,"));
}

#[test]
fn matrix_writes_every_declared_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let m = run(&tiny(tmp.path()), |_| {}).unwrap();
    assert!(m.all_completed());
    assert_eq!(m.runs.len(), 6);
    for algo in ["ppo", "dppo-kurt"] {
        for seed in 1..=3 {
            for f in SEED_FILES {
                assert!(tmp.path().join(format!("{algo}/{seed}/{f}")).is_file(), "{algo}/{seed}/{f}");
            }
        }
    }
    for r in &m.runs {
        let a = &r.artifacts;
        let declared = [&a.metrics, &a.post_update, &a.alignment, &a.stability];
        for p in declared.into_iter().flatten().chain(&a.checkpoints) {
            assert!(tmp.path().join(p).is_file(), "{p}");
        }
    }
    let on_disk = RunManifest::load(&tmp.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(on_disk, m);
    assert_eq!(on_disk.config_hash, tiny(tmp.path()).hash());
}

#[test]
fn artifact_schemas_are_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cfg.algos = vec![Algo::Dppo];
    cfg.seeds = vec![4];
    run(&cfg, |_| {}).unwrap();
    let post = read(tmp.path(), "dppo/4/post_update.csv");
    assert_eq!(post.lines().next(), Some("update_id,post_return,post_value"));
    assert_eq!(post.lines().count(), 1 + 6);
    let align: serde_json::Value = serde_json::from_str(&read(tmp.path(), "dppo/4/alignment.json")).unwrap();
    for key in ["r", "p", "n", "mode"] {
        assert!(align.get(key).is_some(), "alignment.json lacks {key}");
    }
    assert_eq!(align["mode"], "value-level");
    let stab: serde_json::Value = serde_json::from_str(&read(tmp.path(), "dppo/4/stability.json")).unwrap();
    for key in ["sigma", "N", "E", "checkpoint_id"] {
        assert!(stab.get(key).is_some(), "stability.json lacks {key}");
    }
    assert_eq!(stab["N"], 6);
    assert_eq!(stab["E"], 2);
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg = tiny(a.path());
    cfg.seeds = vec![7, 8];
    run(&cfg, |_| {}).unwrap();
    cfg.output_dir = b.path().to_path_buf();
    run(&cfg, |_| {}).unwrap();
    for algo in ["ppo", "dppo-kurt"] {
        for seed in [7, 8] {
            for f in SEED_FILES {
                let rel = format!("{algo}/{seed}/{f}");
                assert_eq!(read(a.path(), &rel), read(b.path(), &rel), "{rel}");
            }
        }
    }
}

#[test]
fn rerun_from_manifest_reproduces_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cfg.algos = vec![Algo::LandscapePpo];
    cfg.seeds = vec![5];
    run(&cfg, |_| {}).unwrap();
    let first = read(tmp.path(), MANIFEST_FILE);
    let stability = read(tmp.path(), "landscape-ppo/5/stability.json");
    let embedded = RunManifest::load(&tmp.path().join(MANIFEST_FILE)).unwrap().config;
    run(&embedded, |_| {}).unwrap();
    assert_eq!(read(tmp.path(), MANIFEST_FILE), first);
    assert_eq!(read(tmp.path(), "landscape-ppo/5/stability.json"), stability);
}

fn synthetic_manifest(dir: &Path, env: &str, runs: &[(Algo, u64, Option<f64>)]) -> PathBuf {
    let mut cfg = ExperimentConfig::default();
    cfg.env = ExperimentConfig::from_toml(&format!("[env]\nname = \"{env}\"\n")).unwrap().env;
    let records: Vec<serde_json::Value> = runs
        .iter()
        .map(|(algo, seed, sigma)| {
            let rel = format!("{algo}/{seed}/stability.json");
            if let Some(s) = sigma {
                let path = dir.join(&rel);
                fs::create_dir_all(path.parent().unwrap()).unwrap();
                let body = serde_json::json!({
                    "sigma": s, "N": 256, "E": 8, "checkpoint_id": "step-0",
                    "final_return": -1.0, "invalid_forks": 0
                });
                fs::write(path, body.to_string()).unwrap();
            }
            serde_json::json!({
                "algo": algo, "seed": seed, "status": "completed",
                "artifacts": {"metrics": null, "checkpoints": [], "post_update": null,
                              "alignment": null, "stability": rel}
            })
        })
        .collect();
    let manifest = serde_json::json!({
        "tool": "momentppo", "version": "0", "config_hash": "x",
        "config": cfg, "runs": records
    });
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_string()).unwrap();
    path
}

#[test]
fn compare_flags_the_lower_sigma() {
    let tmp = tempfile::tempdir().unwrap();
    let p = synthetic_manifest(tmp.path(), "pendulum", &[(Algo::DppoKurt, 1, Some(1.0)), (Algo::Dppo, 1, Some(2.0))]);
    let rows = compare(&[p]).unwrap();
    let flagged: Vec<Algo> = rows.iter().filter(|r| r.lowest_sigma).map(|r| r.algo).collect();
    assert_eq!(flagged, vec![Algo::DppoKurt]);
}

#[test]
fn compare_marks_missing_artifacts_incomplete() {
    let tmp = tempfile::tempdir().unwrap();
    let p = synthetic_manifest(tmp.path(), "bandit", &[(Algo::Ppo, 1, Some(3.0)), (Algo::Ppo, 2, None)]);
    let rows = compare(&[p]).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].incomplete);
    assert_eq!(rows[0].seeds, 1);
    assert!(render_text(&rows).contains("incomplete"));
}

#[test]
fn compare_pools_manifests_and_is_pure() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = synthetic_manifest(a.path(), "bandit", &[(Algo::Ppo, 1, Some(2.0))]);
    let pb = synthetic_manifest(b.path(), "bandit", &[(Algo::Ppo, 2, Some(4.0)), (Algo::Crs, 2, Some(1.0))]);
    let rows = compare(&[pa.clone(), pb.clone()]).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].seeds, 2);
    assert_eq!(rows[0].sigma_mean, 3.0);
    assert_eq!(rows[1].reduction_vs_ppo_pct, Some(100.0 * 2.0 / 3.0));
    assert_eq!(compare(&[pa, pb]).unwrap(), rows);
}

#[test]
fn sweep_reports_every_checkpoint_and_the_variance_level() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cfg.algos = vec![Algo::Dppo];
    cfg.seeds = vec![1];
    cfg.checkpoint_interval = 128;
    let reports = sweep_alignment(&cfg, |_| {}).unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].checkpoints.len(), 3);
    assert!(reports[0].variance_level.is_some());
    assert!(reports[0].notice.is_none());
    let on_disk: Vec<SweepReport> = serde_json::from_str(&read(tmp.path(), SWEEP_FILE)).unwrap();
    assert_eq!(on_disk, reports);
    // The final checkpoint is measured exactly as `run` measured it.
    let align: serde_json::Value = serde_json::from_str(&read(tmp.path(), "dppo/1/alignment.json")).unwrap();
    assert_eq!(align["r"].as_f64().unwrap(), reports[0].checkpoints[2].value_level.pearson_r);
}

#[test]
fn sweep_with_two_checkpoints_omits_variance_level() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cfg.algos = vec![Algo::Ppo];
    cfg.seeds = vec![2];
    let reports = sweep_alignment(&cfg, |_| {}).unwrap();
    assert_eq!(reports[0].checkpoints.len(), 2);
    assert!(reports[0].variance_level.is_none());
    assert!(reports[0].notice.as_deref().unwrap().contains("at least 3"));
}

#[test]
fn frozen_policy_on_a_quiet_env_is_degenerate_everywhere() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    quiet(&mut cfg);
    cfg.algos = vec![Algo::Dppo];
    cfg.seeds = vec![3];
    cfg.checkpoint_interval = 128;
    cfg.ppo.lr = 0.0;
    cfg.stability.value_states = momentppo_core::stability::ValueStates::Probe;
    let reports = sweep_alignment(&cfg, |_| {}).unwrap();
    let r = &reports[0];
    assert_eq!(r.checkpoints.len(), 3);
    for c in &r.checkpoints {
        assert_eq!(c.return_variance, 0.0);
        assert_eq!(c.value_variance, 0.0);
        assert!(c.value_level.degenerate);
    }
    assert!(r.variance_level.unwrap().degenerate);
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_momentppo"))
}

#[test]
fn binary_rejects_invalid_config_with_field_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "seeds = []\n[ppo]\ncvar_alpha = 0.0\n").unwrap();
    let out = binary().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("seeds:"), "{err}");
    assert!(err.contains("ppo.cvar_alpha"), "{err}");

    fs::write(&path, "sedes = [1]\n").unwrap();
    let out = binary().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn binary_print_config_parses_back() {
    let out = binary().arg("print-config").output().unwrap();
    assert!(out.status.success());
    let cfg = ExperimentConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
}

#[test]
fn binary_run_honours_output_dir_override_and_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("exp.toml");
    let mut cfg = tiny(&tmp.path().join("ignored"));
    cfg.algos = vec![Algo::Ppo];
    cfg.seeds = vec![9];
    fs::write(&cfg_path, cfg.to_toml()).unwrap();
    let out_dir = tmp.path().join("out");
    let out = binary()
        .arg("run")
        .arg(&cfg_path)
        .env(momentppo_cli::OUTPUT_DIR_ENV, &out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("ppo/9/stability.json").is_file());
    assert!(!tmp.path().join("ignored").exists());

    let csv = tmp.path().join("table.csv");
    let out = binary().arg("compare").arg(out_dir.join(MANIFEST_FILE)).arg("--csv").arg(&csv).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("ppo") && text.contains('*'), "{text}");
    assert!(read(tmp.path(), "table.csv").starts_with("env,algo,seeds"));
}
