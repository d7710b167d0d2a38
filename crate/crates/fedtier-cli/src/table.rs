//! `fedtier table`: renders accuracy comparison tables from result
//! directories. The command scans a directory tree for `summary.csv`
//! files (one per `fedtier run` invocation), so a sweep is simply
//! several runs written into sibling subdirectories.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::ValueEnum;
use fedtier::Algorithm;

use crate::output::{ROUNDS_FILE, SUMMARY_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    /// Arms × beta values, final accuracy under quantity skew.
    BetaSweep,
    /// Arms × {iid, alpha values descending}, final accuracy.
    AlphaSweep,
    /// Arms × non-top robots, final per-robot accuracy.
    PerRobot,
}

/// A sweep column: its header label and the predicate picking its rows.
type SweepColumn = (String, Box<dyn Fn(&SummaryRow) -> bool>);

/// A parsed `summary.csv` row, tagged with the directory it came from.
struct SummaryRow {
    dir: PathBuf,
    arm: String,
    seed: String,
    status: String,
    scheme: String,
    beta: Option<f64>,
    alpha: Option<f64>,
    final_accuracy: Option<f64>,
    top_robots: Vec<u64>,
}

impl SummaryRow {
    fn is_aggregate(&self) -> bool {
        self.seed == "all"
    }

    fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

fn scan_for_summaries(dir: &Path, found: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    let summary = dir.join(SUMMARY_FILE);
    if summary.is_file() {
        found.push(summary);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot read directory {}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for sub in subdirs {
        scan_for_summaries(&sub, found)?;
    }
    Ok(())
}

fn parse_summary(path: &Path) -> anyhow::Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let (Some(arm), Some(seed), Some(status), Some(scheme), Some(final_acc)) = (
        column("arm"),
        column("seed"),
        column("status"),
        column("scheme"),
        column("final_accuracy"),
    ) else {
        bail!("{} is missing expected summary columns", path.display());
    };
    let beta = column("beta");
    let alpha = column("alpha");
    let tops = column("top_robots");

    let dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("bad row in {}", path.display()))?;
        let cell = |idx: usize| record.get(idx).unwrap_or("").to_string();
        let float = |idx: Option<usize>| {
            idx.and_then(|i| record.get(i))
                .filter(|s| !s.is_empty())
                .and_then(|s| s.parse::<f64>().ok())
        };
        rows.push(SummaryRow {
            dir: dir.clone(),
            arm: cell(arm),
            seed: cell(seed),
            status: cell(status),
            scheme: cell(scheme),
            beta: float(beta),
            alpha: float(alpha),
            final_accuracy: float(Some(final_acc)),
            top_robots: tops
                .and_then(|i| record.get(i))
                .map(|s| {
                    s.split('|')
                        .filter_map(|part| part.parse::<u64>().ok())
                        .collect()
                })
                .unwrap_or_default(),
        });
    }
    Ok(rows)
}

fn load_rows(dir: &Path) -> anyhow::Result<Vec<SummaryRow>> {
    let mut files = Vec::new();
    scan_for_summaries(dir, &mut files)?;
    if files.is_empty() {
        bail!(
            "no {SUMMARY_FILE} found under {}; run `fedtier run` first",
            dir.display()
        );
    }
    let mut rows = Vec::new();
    for file in files {
        rows.extend(parse_summary(&file)?);
    }
    Ok(rows)
}

/// Arms present in the rows, in the fixed canonical order.
fn arms_present(rows: &[SummaryRow]) -> Vec<&'static str> {
    Algorithm::ALL
        .iter()
        .map(|a| a.name())
        .filter(|name| rows.iter().any(|r| r.arm == *name))
        .collect()
}

fn percent(value: f64) -> String {
    format!("{:.2}", value * 100.0)
}

/// Mean over every matching aggregate cell, formatted as a percentage,
/// or the placeholder when nothing matches.
fn cell_mean(values: &[f64]) -> String {
    if values.is_empty() {
        "--".to_string()
    } else {
        percent(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn render(header: Vec<String>, body: Vec<Vec<String>>) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &body {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for row in std::iter::once(&header).chain(body.iter()) {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            if i == 0 {
                line.push_str(&format!("{:<width$}", cell, width = widths[0]));
            } else {
                line.push_str(&format!("  {:>width$}", cell, width = widths[i]));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn sweep_table(
    rows: &[SummaryRow],
    columns: &[SweepColumn],
) -> String {
    let arms = arms_present(rows);
    let mut header = vec!["arm".to_string()];
    header.extend(columns.iter().map(|(label, _)| label.clone()));
    let mut body = Vec::new();
    for arm in arms {
        let mut line = vec![arm.to_string()];
        for (_, matches) in columns {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.is_aggregate() && r.is_ok() && r.arm == arm && matches(r))
                .filter_map(|r| r.final_accuracy)
                .collect();
            line.push(cell_mean(&values));
        }
        body.push(line);
    }
    render(header, body)
}

fn beta_sweep(rows: &[SummaryRow]) -> anyhow::Result<String> {
    let mut betas: Vec<f64> = Vec::new();
    for row in rows.iter().filter(|r| r.scheme == "quantity-skew") {
        if let Some(b) = row.beta {
            if !betas.iter().any(|x| x == &b) {
                betas.push(b);
            }
        }
    }
    if betas.is_empty() {
        bail!("no quantity-skew results found; nothing to sweep over beta");
    }
    betas.sort_by(f64::total_cmp);
    let columns: Vec<SweepColumn> = betas
        .into_iter()
        .map(|b| {
            let label = format!("beta={b}");
            let pred: Box<dyn Fn(&SummaryRow) -> bool> =
                Box::new(move |r: &SummaryRow| r.scheme == "quantity-skew" && r.beta == Some(b));
            (label, pred)
        })
        .collect();
    Ok(sweep_table(rows, &columns))
}

fn alpha_sweep(rows: &[SummaryRow]) -> anyhow::Result<String> {
    let has_iid = rows.iter().any(|r| r.scheme == "iid");
    let mut alphas: Vec<f64> = Vec::new();
    for row in rows.iter().filter(|r| r.scheme == "class-skew") {
        if let Some(a) = row.alpha {
            if !alphas.iter().any(|x| x == &a) {
                alphas.push(a);
            }
        }
    }
    if !has_iid && alphas.is_empty() {
        bail!("no iid or class-skew results found; nothing to sweep over alpha");
    }
    // most mixed (iid) first, then alpha falling toward fully disjoint
    alphas.sort_by(|a, b| f64::total_cmp(b, a));
    let mut columns: Vec<SweepColumn> = Vec::new();
    if has_iid {
        columns.push((
            "iid".to_string(),
            Box::new(|r: &SummaryRow| r.scheme == "iid"),
        ));
    }
    for a in alphas {
        columns.push((
            format!("alpha={a}"),
            Box::new(move |r: &SummaryRow| r.scheme == "class-skew" && r.alpha == Some(a)),
        ));
    }
    Ok(sweep_table(rows, &columns))
}

/// Final-round per-robot accuracy from a run directory's rounds file:
/// `(arm, seed) → robot id → accuracy`.
type PerRobot = BTreeMap<(String, u64), BTreeMap<u64, f64>>;

fn load_per_robot(dir: &Path) -> anyhow::Result<PerRobot> {
    let path = dir.join(ROUNDS_FILE);
    let text = fs::read_to_string(&path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut last_round: BTreeMap<(String, u64), u64> = BTreeMap::new();
    let mut acc: PerRobot = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let value: serde_json::Value =
            serde_json::from_str(line).with_context(|| format!("bad line in {}", path.display()))?;
        let (Some(arm), Some(seed), Some(round), Some(map)) = (
            value.get("arm").and_then(|v| v.as_str()),
            value.get("seed").and_then(|v| v.as_u64()),
            value.get("round").and_then(|v| v.as_u64()),
            value.get("per_robot_accuracy").and_then(|v| v.as_object()),
        ) else {
            bail!("{} has a line without the expected fields", path.display());
        };
        let key = (arm.to_string(), seed);
        if last_round.get(&key).is_some_and(|&r| r >= round) {
            continue;
        }
        last_round.insert(key.clone(), round);
        let robots = map
            .iter()
            .filter_map(|(id, v)| Some((id.parse::<u64>().ok()?, v.as_f64()?)))
            .collect();
        acc.insert(key, robots);
    }
    Ok(acc)
}

fn per_robot(rows: &[SummaryRow]) -> anyhow::Result<String> {
    let dirs: BTreeSet<&PathBuf> = rows.iter().map(|r| &r.dir).collect();
    let mut per_robot: PerRobot = BTreeMap::new();
    for dir in dirs {
        per_robot.extend(load_per_robot(dir)?);
    }
    if per_robot.is_empty() {
        bail!("no per-round records found; nothing to report per robot");
    }

    let tops: BTreeSet<u64> = rows
        .iter()
        .filter(|r| r.is_ok() && !r.is_aggregate())
        .flat_map(|r| r.top_robots.iter().copied())
        .collect();
    let robots: BTreeSet<u64> = per_robot
        .values()
        .flat_map(|m| m.keys().copied())
        .filter(|id| !tops.contains(id))
        .collect();
    if robots.is_empty() {
        bail!("every robot sits in the top tier; no low-level robots to report");
    }

    let arms = arms_present(rows);
    let mut header = vec!["arm".to_string()];
    header.extend(robots.iter().map(|id| format!("R{}", id + 1)));
    let mut body = Vec::new();
    for arm in arms {
        let mut line = vec![arm.to_string()];
        for &robot in &robots {
            let values: Vec<f64> = per_robot
                .iter()
                .filter(|((a, _), _)| a == arm)
                .filter_map(|(_, m)| m.get(&robot).copied())
                .collect();
            line.push(cell_mean(&values));
        }
        body.push(line);
    }
    Ok(render(header, body))
}

pub fn cmd_table(dir: &Path, format: TableFormat) -> anyhow::Result<String> {
    let rows = load_rows(dir)?;
    match format {
        TableFormat::BetaSweep => beta_sweep(&rows),
        TableFormat::AlphaSweep => alpha_sweep(&rows),
        TableFormat::PerRobot => per_robot(&rows),
    }
}
