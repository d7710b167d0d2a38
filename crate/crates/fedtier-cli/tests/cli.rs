//! End-to-end tests of the `fedtier` binary: manifests in, files and
//! exit codes out. Everything runs against small synthetic tasks so the
//! whole suite stays fast.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn fedtier() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedtier"))
}

fn write_manifest(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A 3-class task small enough that a full grid finishes in well under a
/// second.
const FAST_GRID: &str = r#"
[experiment]
arms = ["fedavg", "fednova", "mtf-grasp-avg", "mtf-grasp-nova"]
seeds = [1, 2, 3]

[data]
source = "synthetic"
classes = 3
features = 4
per_class = 20
separation = 2.0
seed = 5

[partition]
scheme = "quantity-skew"
robots = 5
beta = 0.7

[train]
rounds = 2
top_epochs = 1
local_epochs = 2
batch_size = 8
test_fraction = 0.25
"#;

#[test]
fn run_writes_exactly_four_files() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(tmp.path(), "grid.toml", FAST_GRID);
    let out_dir = tmp.path().join("out");

    let out = fedtier()
        .args(["run"])
        .arg(&manifest)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let mut names: Vec<String> = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["comm_ledger.csv", "rounds.jsonl", "skew_report.csv", "summary.csv"]
    );
}

#[test]
fn summary_has_a_row_per_run_plus_one_aggregate_per_arm() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(tmp.path(), "grid.toml", FAST_GRID);
    let out_dir = tmp.path().join("out");
    let out = fedtier()
        .args(["run"])
        .arg(&manifest)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let text = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    // header + 4 arms × 3 seeds + 4 aggregate rows
    assert_eq!(lines.len(), 1 + 12 + 4);
    let run_rows = lines[1..13].to_vec();
    for row in &run_rows {
        assert!(row.contains(",ok,"), "run row not ok: {row}");
    }
    let aggregate_rows: Vec<&&str> = lines[13..].iter().collect();
    for row in &aggregate_rows {
        assert!(row.contains(",all,"), "aggregate row misses seed=all: {row}");
    }
    // tiered arms name their top robots, vanilla arms leave the column empty
    assert!(run_rows.iter().any(|r| r.starts_with("mtf-grasp-avg") && r.ends_with("0|1")));
    assert!(run_rows.iter().any(|r| r.starts_with("fedavg,") && r.ends_with(",")));
}

#[test]
fn rounds_jsonl_covers_every_run_and_round() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(tmp.path(), "grid.toml", FAST_GRID);
    let out_dir = tmp.path().join("out");
    assert!(fedtier()
        .args(["run"])
        .arg(&manifest)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap()
        .status
        .success());

    let text = std::fs::read_to_string(out_dir.join("rounds.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    // 4 arms × 3 seeds × 2 rounds
    assert_eq!(lines.len(), 24);
    for line in &lines {
        assert!(line.get("arm").is_some());
        assert!(line.get("seed").is_some());
        assert!(line.get("round").is_some());
        assert!(line.get("global_accuracy").is_some());
        assert_eq!(line["per_robot_accuracy"].as_object().unwrap().len(), 5);
        assert!(line.get("wall_time").is_none(), "wall time must not leak");
    }
}

#[test]
fn malformed_manifest_exits_2_and_names_the_key() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(
        tmp.path(),
        "bad.toml",
        "[experiment]\narms = [\"fedavg\"]\nseeds = [1]\n\n[data]\nsource = \"synthetic\"\n\n[train]\nlurning_rate = 0.1\n",
    );
    let out = fedtier().args(["run"]).arg(&manifest).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("lurning_rate"),
        "diagnostic must name the bad key: {}",
        stderr(&out)
    );
}

#[test]
fn unknown_algorithm_exits_2() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(
        tmp.path(),
        "bad.toml",
        "[experiment]\narms = [\"fedprox\"]\nseeds = [1]\n\n[data]\nsource = \"synthetic\"\n",
    );
    let out = fedtier().args(["validate"]).arg(&manifest).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("fedprox"), "stderr: {}", stderr(&out));
}

#[test]
fn conflicting_keys_exit_2() {
    let tmp = TempDir::new().unwrap();
    // alpha does not belong to a quantity-skew partition
    let manifest = write_manifest(
        tmp.path(),
        "bad.toml",
        "[experiment]\narms = [\"fedavg\"]\nseeds = [1]\n\n[data]\nsource = \"synthetic\"\n\n[partition]\nscheme = \"quantity-skew\"\nalpha = 0.3\n",
    );
    let out = fedtier().args(["run"]).arg(&manifest).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("alpha"), "stderr: {}", stderr(&out));
}

#[test]
fn validate_reports_infeasible_top_count_but_exits_0() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(
        tmp.path(),
        "infeasible.toml",
        "[experiment]\narms = [\"mtf-grasp-avg\"]\nseeds = [1]\n\n[data]\nsource = \"synthetic\"\n\n[partition]\nscheme = \"quantity-skew\"\nrobots = 5\n\n[train]\ntop_count = 5\n",
    );
    let out = fedtier().args(["validate"]).arg(&manifest).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("INFEASIBLE"), "stdout: {text}");
}

#[test]
fn validate_warns_about_empty_low_level_robots_at_beta_1() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(
        tmp.path(),
        "beta1.toml",
        "[experiment]\narms = [\"mtf-grasp-avg\"]\nseeds = [1]\n\n[data]\nsource = \"synthetic\"\n\n[partition]\nscheme = \"quantity-skew\"\nbeta = 1.0\n",
    );
    let out = fedtier().args(["validate"]).arg(&manifest).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(
        text.contains("empty low-level robots"),
        "stdout: {text}"
    );
}

#[test]
fn validate_passes_a_defaults_only_manifest() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(
        tmp.path(),
        "minimal.toml",
        "[experiment]\narms = [\"mtf-grasp-avg\"]\nseeds = [1]\n\n[data]\nsource = \"synthetic\"\n",
    );
    let out = fedtier().args(["validate"]).arg(&manifest).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(!text.contains("WARNING"), "stdout: {text}");
    assert!(!text.contains("INFEASIBLE"), "stdout: {text}");
    assert!(text.contains("0 infeasible"), "stdout: {text}");
}

#[test]
fn rerun_overwrites_outputs_byte_identically() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(tmp.path(), "grid.toml", FAST_GRID);
    let out_dir = tmp.path().join("out");

    let read_all = |dir: &Path| -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    std::fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort();
        files
    };

    assert!(fedtier()
        .args(["run"])
        .arg(&manifest)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap()
        .status
        .success());
    let first = read_all(&out_dir);
    assert!(fedtier()
        .args(["run"])
        .arg(&manifest)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap()
        .status
        .success());
    let second = read_all(&out_dir);
    assert_eq!(first, second, "re-running must overwrite bit-identically");
}

#[test]
fn output_root_env_var_relocates_relative_dirs() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(
        tmp.path(),
        "grid.toml",
        &FAST_GRID.replace(
            "seeds = [1, 2, 3]",
            "seeds = [1]\noutput_dir = \"nested/results\"",
        ),
    );
    let root = tmp.path().join("root");
    assert!(fedtier()
        .args(["run"])
        .arg(&manifest)
        .env("FEDTIER_OUT_ROOT", &root)
        .output()
        .unwrap()
        .status
        .success());
    assert!(root.join("nested/results/summary.csv").is_file());
}

#[test]
fn table_renders_beta_sweep_with_placeholders() {
    let tmp = TempDir::new().unwrap();
    let low = write_manifest(tmp.path(), "low.toml", FAST_GRID);
    let high = write_manifest(
        tmp.path(),
        "high.toml",
        &FAST_GRID
            .replace("beta = 0.7", "beta = 0.9")
            .replace(
                "arms = [\"fedavg\", \"fednova\", \"mtf-grasp-avg\", \"mtf-grasp-nova\"]",
                "arms = [\"fedavg\", \"mtf-grasp-avg\"]",
            ),
    );
    let results = tmp.path().join("results");
    for (manifest, sub) in [(&low, "b07"), (&high, "b09")] {
        assert!(fedtier()
            .args(["run"])
            .arg(manifest)
            .arg("--out")
            .arg(results.join(sub))
            .output()
            .unwrap()
            .status
            .success());
    }

    let out = fedtier()
        .args(["table"])
        .arg(&results)
        .args(["--format", "beta-sweep"])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].contains("beta=0.7") && lines[0].contains("beta=0.9"));
    // four arms at beta 0.7, two of them missing at 0.9
    assert_eq!(lines.len(), 5);
    let fednova_row = lines.iter().find(|l| l.starts_with("fednova")).unwrap();
    assert!(fednova_row.ends_with("--"), "missing cell placeholder: {fednova_row}");
}

#[test]
fn table_renders_per_robot_columns_for_non_top_robots() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(tmp.path(), "grid.toml", FAST_GRID);
    let results = tmp.path().join("results");
    assert!(fedtier()
        .args(["run"])
        .arg(&manifest)
        .arg("--out")
        .arg(&results)
        .output()
        .unwrap()
        .status
        .success());

    let out = fedtier()
        .args(["table"])
        .arg(&results)
        .args(["--format", "per-robot"])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let header = text.lines().next().unwrap();
    // robots 0 and 1 are the top tier at beta 0.7; the rest are shown
    // with one-based display names
    assert!(!header.contains("R1") || header.contains("R1 "), "header: {header}");
    for col in ["R3", "R4", "R5"] {
        assert!(header.contains(col), "header: {header}");
    }
    assert!(!header.contains("R2"), "top robot leaked into header: {header}");
}

#[test]
fn table_on_an_empty_directory_exits_1() {
    let tmp = TempDir::new().unwrap();
    let out = fedtier()
        .args(["table"])
        .arg(tmp.path())
        .args(["--format", "beta-sweep"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("summary.csv"), "stderr: {}", stderr(&out));
}

#[test]
fn csv_datasets_run_through_the_binary() {
    let tmp = TempDir::new().unwrap();
    let mut csv = String::from("x0,x1,label\n");
    let mut state = 11u64;
    for i in 0..120 {
        // cheap LCG keeps the fixture deterministic without extra deps
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let jitter = (state >> 40) as f64 / (1u64 << 24) as f64 - 0.5;
        let label = i % 3;
        csv.push_str(&format!(
            "{},{},{label}\n",
            label as f64 + 0.2 * jitter,
            -(label as f64) + 0.2 * jitter,
        ));
    }
    std::fs::write(tmp.path().join("points.csv"), csv).unwrap();
    // the data path is relative to the manifest's own directory
    let manifest = write_manifest(
        tmp.path(),
        "csv.toml",
        r#"
[experiment]
arms = ["mtf-grasp-avg"]
seeds = [1]

[data]
source = "csv"
path = "points.csv"
label_column = "label"

[partition]
scheme = "iid"
robots = 4

[train]
rounds = 2
top_epochs = 1
local_epochs = 2
test_fraction = 0.25
"#,
    );
    let out_dir = tmp.path().join("out");
    let out = fedtier()
        .args(["run"])
        .arg(&manifest)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.contains("mtf-grasp-avg,1,ok"), "summary: {summary}");
}

#[test]
fn missing_csv_file_exits_2_and_names_the_path() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(
        tmp.path(),
        "missing.toml",
        "[experiment]\narms = [\"fedavg\"]\nseeds = [1]\n\n[data]\nsource = \"csv\"\npath = \"nowhere.csv\"\nlabel_column = \"label\"\n",
    );
    let out = fedtier().args(["run"]).arg(&manifest).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nowhere.csv"), "stderr: {}", stderr(&out));
}
