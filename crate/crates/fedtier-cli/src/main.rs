//! `fedtier` — run, inspect, and validate multi-tier federated learning
//! experiments described by a TOML manifest.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 when the config
//! itself cannot be used (parse error, unknown key, missing data file).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand};
use fedtier::{run_experiment, seeded_config};

mod config;
mod output;
mod table;

use output::RunResult;
use table::TableFormat;

/// Environment variable that relocates relative output directories.
const OUT_ROOT_ENV: &str = "FEDTIER_OUT_ROOT";

#[derive(Parser)]
#[command(name = "fedtier", version, about = "Multi-tier federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every configured arm × seed experiment and write result files
    Run {
        /// TOML manifest describing the experiment grid
        config: PathBuf,
        /// Output directory (overrides the manifest and FEDTIER_OUT_ROOT)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a comparison table from one or more result directories
    Table {
        /// Directory tree containing `fedtier run` outputs
        dir: PathBuf,
        /// Which table to render
        #[arg(long, value_enum)]
        format: TableFormat,
    },
    /// Check a manifest for problems without training anything
    Validate {
        /// TOML manifest to check
        config: PathBuf,
    },
}

/// A failure tagged with the exit code it should produce.
enum Failure {
    /// The manifest is unusable: exit code 2.
    Config(anyhow::Error),
    /// The manifest was fine but the work failed: exit code 1.
    Runtime(anyhow::Error),
}

impl Failure {
    fn report(&self) -> ExitCode {
        match self {
            Failure::Config(e) => {
                eprintln!("config error: {e:#}");
                ExitCode::from(2)
            }
            Failure::Runtime(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run { config, out } => cmd_run(&config, out),
        Cmd::Table { dir, format } => cmd_table(&dir, format),
        Cmd::Validate { config } => cmd_validate(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => failure.report(),
    }
}

/// Where result files go: `--out` wins, then the manifest's
/// `output_dir`, then `runs/`. A relative choice from the manifest or
/// the default is re-rooted under `$FEDTIER_OUT_ROOT` when that is set.
fn resolve_out_dir(flag: Option<PathBuf>, from_config: Option<&Path>) -> PathBuf {
    if let Some(dir) = flag {
        return dir;
    }
    let base = from_config
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("runs"));
    if base.is_absolute() {
        return base;
    }
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(base),
        None => base,
    }
}

fn cmd_run(config_path: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let manifest = config::load(config_path).map_err(Failure::Config)?;
    for &arm in &manifest.arms {
        manifest
            .config_for(arm)
            .validate()
            .map_err(|e| Failure::Config(anyhow!("arm {}: {e}", arm.name())))?;
    }

    let out_dir = resolve_out_dir(out, manifest.output_dir.as_deref());
    let mut results = Vec::with_capacity(manifest.arms.len() * manifest.seeds.len());
    let mut failures = 0usize;
    for &arm in &manifest.arms {
        for &seed in &manifest.seeds {
            let cfg = seeded_config(&manifest.config_for(arm), seed);
            let outcome = run_experiment(&cfg, &manifest.data);
            match &outcome {
                Ok(run) => {
                    let last = run.records.last();
                    println!(
                        "run arm={} seed={seed} rounds={} final_accuracy={}",
                        arm.name(),
                        run.records.len(),
                        last.map(|r| r.global_accuracy.to_string())
                            .unwrap_or_else(|| "n/a".into()),
                    );
                }
                Err(e) => {
                    failures += 1;
                    eprintln!("run arm={} seed={seed} failed: {e}", arm.name());
                }
            }
            results.push(RunResult { arm, seed, outcome });
        }
    }

    let written =
        output::write_outputs(&out_dir, &manifest, &results).map_err(Failure::Runtime)?;
    for path in &written {
        println!("wrote {}", path.display());
    }

    if failures > 0 {
        Err(Failure::Runtime(anyhow!(
            "{failures} of {} runs failed; they are flagged in {}",
            results.len(),
            out_dir.join(output::SUMMARY_FILE).display()
        )))
    } else {
        Ok(())
    }
}

fn cmd_table(dir: &Path, format: TableFormat) -> Result<(), Failure> {
    let rendered = table::cmd_table(dir, format).map_err(Failure::Runtime)?;
    print!("{rendered}");
    Ok(())
}

fn cmd_validate(config_path: &Path) -> Result<(), Failure> {
    let manifest = config::load(config_path).map_err(Failure::Config)?;
    let report = config::validate_manifest(&manifest);
    for line in &report.lines {
        println!("{line}");
    }
    println!(
        "validation: {} ok, {} warning(s), {} infeasible",
        report.passed, report.warnings, report.infeasible
    );
    Ok(())
}
