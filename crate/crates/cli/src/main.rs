use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use momentppo_cli::compare::{render_csv, render_text};
use momentppo_cli::{compare, run, sweep_alignment, CliError, ExperimentConfig, RunManifest};

#[derive(Parser)]
#[command(name = "momentppo", version, about = "Moment-regularized PPO experiments and stability reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every algorithm x seed in a config (or in a manifest's embedded
    /// config) and write artifacts.
    Run { config: PathBuf },
    /// Summarize one or more manifests into a stability table.
    Compare {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Measure critic/return alignment at every saved checkpoint.
    SweepAlignment { config: PathBuf },
    /// Print the fully-defaulted config schema.
    PrintConfig,
}

fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    if path.extension().is_some_and(|e| e == "json") {
        let mut cfg = RunManifest::load(path)?.config;
        cfg.apply_output_override(std::env::var(momentppo_cli::OUTPUT_DIR_ENV).ok());
        cfg.validate()?;
        Ok(cfg)
    } else {
        ExperimentConfig::load(path)
    }
}

fn progress(msg: &str) {
    eprintln!("[momentppo] {msg}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<CliError>() {
                Some(CliError::Invalid(_) | CliError::Parse(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            let manifest = run(&cfg, progress)?;
            println!("{}", cfg.output_dir.join(momentppo_cli::run::MANIFEST_FILE).display());
            Ok(if manifest.all_completed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Compare { manifests, csv } => {
            let rows = compare(&manifests)?;
            print!("{}", render_text(&rows));
            if let Some(path) = csv {
                std::fs::write(&path, render_csv(&rows)).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::SweepAlignment { config } => {
            let cfg = load_config(&config)?;
            let reports = sweep_alignment(&cfg, progress)?;
            for r in &reports {
                for c in &r.checkpoints {
                    println!(
                        "{} seed {} {}: r = {:.4}, p = {:.4}{}",
                        r.algo,
                        r.seed,
                        c.checkpoint_id,
                        c.value_level.pearson_r,
                        c.value_level.p_value,
                        if c.value_level.degenerate { " (degenerate)" } else { "" }
                    );
                }
                match (&r.variance_level, &r.notice) {
                    (Some(v), _) => println!(
                        "{} seed {} variance-level: r = {:.4}, p = {:.4}{}",
                        r.algo,
                        r.seed,
                        v.pearson_r,
                        v.p_value,
                        if v.degenerate { " (degenerate)" } else { "" }
                    ),
                    (None, Some(n)) => println!("{} seed {}: {n}", r.algo, r.seed),
                    (None, None) => {}
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::PrintConfig => {
            print!("{}", ExperimentConfig::default().to_toml());
            Ok(ExitCode::SUCCESS)
        }
    }
}
