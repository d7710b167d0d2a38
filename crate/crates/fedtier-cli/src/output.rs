//! Result files for `fedtier run`. Every writer builds the full file in
//! memory and swaps it into place atomically, so re-running an identical
//! manifest overwrites each file with byte-identical content and a
//! crashed run never leaves a half-written file behind.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use anyhow::Context;
use fedtier::{Algorithm, RoundRecord, RunOutput, SkewReport};
use serde::Serialize;

use crate::config::Manifest;

/// One cell of the arm × seed grid.
pub struct RunResult {
    pub arm: Algorithm,
    pub seed: u64,
    pub outcome: Result<RunOutput, fedtier::Error>,
}

/// File names written into the output directory.
pub const ROUNDS_FILE: &str = "rounds.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SKEW_FILE: &str = "skew_report.csv";
pub const LEDGER_FILE: &str = "comm_ledger.csv";

fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!("{name}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

/// Writes all four result files and returns their paths in write order.
pub fn write_outputs(
    dir: &Path,
    manifest: &Manifest,
    results: &[RunResult],
) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let files = [
        (ROUNDS_FILE, rounds_jsonl(results)?),
        (SUMMARY_FILE, summary_csv(manifest, results)?),
        (SKEW_FILE, skew_csv(manifest, results)?),
        (LEDGER_FILE, ledger_csv(results)?),
    ];
    let mut written = Vec::with_capacity(files.len());
    for (name, contents) in files {
        let path = dir.join(name);
        write_atomic(&path, &contents)
            .with_context(|| format!("cannot write {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Serialize)]
struct RoundLine<'a> {
    arm: &'a str,
    seed: u64,
    #[serde(flatten)]
    record: &'a RoundRecord,
}

fn rounds_jsonl(results: &[RunResult]) -> anyhow::Result<Vec<u8>> {
    let mut out = String::new();
    for result in results {
        let Ok(output) = &result.outcome else {
            continue;
        };
        for record in &output.records {
            let line = serde_json::to_string(&RoundLine {
                arm: result.arm.name(),
                seed: result.seed,
                record,
            })?;
            out.push_str(&line);
            out.push('\n');
        }
    }
    Ok(out.into_bytes())
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

fn final_accuracy(records: &[RoundRecord]) -> Option<f64> {
    records.last().map(|r| r.global_accuracy)
}

fn best_accuracy(records: &[RoundRecord]) -> Option<f64> {
    records
        .iter()
        .map(|r| r.global_accuracy)
        .max_by(f64::total_cmp)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

/// One row per run plus one aggregate row per arm (`seed` column "all"):
/// mean and sample standard deviation over the seeds that succeeded.
fn summary_csv(manifest: &Manifest, results: &[RunResult]) -> anyhow::Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "arm",
        "seed",
        "status",
        "scheme",
        "beta",
        "alpha",
        "final_accuracy",
        "best_accuracy",
        "final_accuracy_std",
        "total_model_params",
        "top_robots",
    ])?;

    let scheme = manifest.scheme_label;
    let beta = fmt_opt(manifest.beta);
    let alpha = fmt_opt(manifest.alpha);

    for result in results {
        match &result.outcome {
            Ok(output) => {
                let tops = output
                    .tiers
                    .as_ref()
                    .map(|t| {
                        t.top
                            .iter()
                            .map(|id| id.to_string())
                            .collect::<Vec<_>>()
                            .join("|")
                    })
                    .unwrap_or_default();
                writer.write_record([
                    result.arm.name(),
                    &result.seed.to_string(),
                    "ok",
                    scheme,
                    &beta,
                    &alpha,
                    &fmt_opt(final_accuracy(&output.records)),
                    &fmt_opt(best_accuracy(&output.records)),
                    "",
                    &output.ledger.total_model_traffic().to_string(),
                    &tops,
                ])?;
            }
            Err(e) => {
                writer.write_record([
                    result.arm.name(),
                    &result.seed.to_string(),
                    &format!("failed: {e}"),
                    scheme,
                    &beta,
                    &alpha,
                    "",
                    "",
                    "",
                    "",
                    "",
                ])?;
            }
        }
    }

    for &arm in &manifest.arms {
        let ok_runs: Vec<&RunOutput> = results
            .iter()
            .filter(|r| r.arm == arm)
            .filter_map(|r| r.outcome.as_ref().ok())
            .collect();
        let attempted = results.iter().filter(|r| r.arm == arm).count();
        let status = if ok_runs.len() == attempted {
            "ok".to_string()
        } else {
            format!("partial: {} of {attempted} runs succeeded", ok_runs.len())
        };
        let finals: Vec<f64> = ok_runs
            .iter()
            .filter_map(|o| final_accuracy(&o.records))
            .collect();
        let bests: Vec<f64> = ok_runs
            .iter()
            .filter_map(|o| best_accuracy(&o.records))
            .collect();
        let totals: Vec<f64> = ok_runs
            .iter()
            .map(|o| o.ledger.total_model_traffic() as f64)
            .collect();
        writer.write_record([
            arm.name(),
            "all",
            &status,
            scheme,
            &beta,
            &alpha,
            &fmt_opt((!finals.is_empty()).then(|| mean(&finals))),
            &fmt_opt((!bests.is_empty()).then(|| mean(&bests))),
            &fmt_opt((!finals.is_empty()).then(|| std_dev(&finals))),
            &fmt_opt((!totals.is_empty()).then(|| mean(&totals))),
            "",
        ])?;
    }

    Ok(writer.into_inner()?)
}

/// Per-robot class counts, one block per seed. Partitions are
/// arm-independent, so the first successful run of each seed speaks for
/// all arms.
fn skew_csv(manifest: &Manifest, results: &[RunResult]) -> anyhow::Result<Vec<u8>> {
    let mut per_seed: BTreeMap<u64, &SkewReport> = BTreeMap::new();
    for result in results {
        if let Ok(output) = &result.outcome {
            per_seed.entry(result.seed).or_insert(&output.skew);
        }
    }

    let num_classes = manifest.data.num_classes();
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["seed".to_string(), "robot_id".into(), "empty".into(), "total".into()];
    header.extend((0..num_classes).map(|c| format!("class_{c}")));
    writer.write_record(&header)?;

    for &seed in &manifest.seeds {
        let Some(report) = per_seed.get(&seed) else {
            continue;
        };
        for row in &report.rows {
            let mut record = vec![
                seed.to_string(),
                row.robot_id.to_string(),
                row.empty.to_string(),
                row.total.to_string(),
            ];
            record.extend(row.class_counts.iter().map(|c| c.to_string()));
            writer.write_record(&record)?;
        }
    }

    Ok(writer.into_inner()?)
}

/// Model traffic per round and link class for every run, straight from
/// each run's communication ledger.
fn ledger_csv(results: &[RunResult]) -> anyhow::Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["arm", "seed", "round", "link_class", "params"])?;
    for result in results {
        let Ok(output) = &result.outcome else {
            continue;
        };
        for (round, class, params) in output.ledger.model_traffic_rows() {
            writer.write_record([
                result.arm.name(),
                &result.seed.to_string(),
                &round.to_string(),
                class.as_str(),
                &params.to_string(),
            ])?;
        }
    }
    Ok(writer.into_inner()?)
}
