//! Manifest parsing: a TOML file names the data source, the partition,
//! the learner, the training settings, and the arm × seed grid to run.
//!
//! Every knob has a default matching the reference fleet setup (7 robots,
//! 2 top robots, 5 top epochs, 15 local epochs, 10 rounds, equal score
//! weights), so a minimal manifest only needs `[experiment]` and `[data]`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use fedtier::{
    dry_run, generate_synthetic, load_csv, seeded_config, Algorithm, AssignmentPolicy, CsvSchema,
    ExperimentConfig, GlobalDataset, Hyperparams, LearnerSpec, PartitionPlan, PartitionScheme,
};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    experiment: ExperimentSection,
    data: DataSection,
    #[serde(default)]
    partition: PartitionSection,
    #[serde(default)]
    learner: LearnerSection,
    #[serde(default)]
    train: TrainSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    arms: Vec<String>,
    seeds: Vec<u64>,
    #[serde(default)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    /// "synthetic" or "csv".
    source: String,
    // synthetic-only knobs
    classes: Option<usize>,
    features: Option<usize>,
    per_class: Option<usize>,
    separation: Option<f64>,
    seed: Option<u64>,
    // csv-only knobs
    path: Option<PathBuf>,
    label_column: Option<String>,
    feature_columns: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartitionSection {
    /// "iid", "class-skew" or "quantity-skew" (the default).
    scheme: Option<String>,
    robots: Option<usize>,
    beta: Option<f64>,
    alpha: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LearnerSection {
    /// "logistic-regression" (the default) or "mlp".
    kind: Option<String>,
    hidden_units: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    top_epochs: Option<u64>,
    local_epochs: Option<u64>,
    rounds: Option<u64>,
    lambda_dds: Option<f64>,
    lambda_dqs: Option<f64>,
    top_count: Option<usize>,
    test_fraction: Option<f64>,
}

/// A parsed manifest resolved against the data it names: everything a
/// run or a dry-run validation needs.
pub struct Manifest {
    pub arms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    /// Arm-independent template; `algorithm` is overwritten per arm and
    /// the seeds are applied per run.
    pub base: ExperimentConfig,
    pub data: GlobalDataset,
    pub data_label: String,
    pub scheme_label: &'static str,
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
}

impl Manifest {
    pub fn config_for(&self, arm: Algorithm) -> ExperimentConfig {
        let mut cfg = self.base.clone();
        cfg.algorithm = arm;
        cfg
    }
}

/// Reads and resolves a manifest. Errors from this function mean the
/// config itself is unusable (parse failure, unknown or conflicting
/// keys, missing data file) and map to exit code 2.
pub fn load(path: &Path) -> anyhow::Result<Manifest> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let file: FileConfig = toml::from_str(&text)
        .map_err(|e| anyhow!("{} is not a valid manifest: {e}", path.display()))?;
    resolve(file, path)
}

fn forbid(given: bool, message: &str) -> anyhow::Result<()> {
    if given {
        bail!("{message}");
    }
    Ok(())
}

fn resolve(file: FileConfig, config_path: &Path) -> anyhow::Result<Manifest> {
    let FileConfig {
        experiment,
        data,
        partition,
        learner,
        train,
    } = file;

    if experiment.arms.is_empty() {
        bail!("[experiment] arms must name at least one algorithm");
    }
    let mut arms = Vec::with_capacity(experiment.arms.len());
    for name in &experiment.arms {
        let arm: Algorithm = name
            .parse()
            .map_err(|e: fedtier::Error| anyhow!("[experiment] arms: {e}"))?;
        if arms.contains(&arm) {
            bail!("[experiment] arms lists \"{name}\" twice");
        }
        arms.push(arm);
    }
    if experiment.seeds.is_empty() {
        bail!("[experiment] seeds must list at least one seed");
    }
    let mut seen = BTreeSet::new();
    for &seed in &experiment.seeds {
        if !seen.insert(seed) {
            bail!("[experiment] seeds lists {seed} twice");
        }
    }

    let (dataset, data_label) = build_dataset(&data, config_path)?;

    let defaults = Hyperparams::default();
    let top_count = train.top_count.unwrap_or(defaults.top_count);
    let robots = partition.robots.unwrap_or(7);

    let scheme_name = partition.scheme.as_deref().unwrap_or("quantity-skew");
    let (scheme, scheme_label, beta, alpha) = match scheme_name {
        "iid" => {
            forbid(
                partition.beta.is_some(),
                "[partition] beta only applies to scheme = \"quantity-skew\"",
            )?;
            forbid(
                partition.alpha.is_some(),
                "[partition] alpha only applies to scheme = \"class-skew\"",
            )?;
            (PartitionScheme::Iid, "iid", None, None)
        }
        "quantity-skew" => {
            forbid(
                partition.alpha.is_some(),
                "[partition] alpha only applies to scheme = \"class-skew\"",
            )?;
            let beta = partition.beta.unwrap_or(0.7);
            (
                PartitionScheme::QuantitySkew { beta, top_count },
                "quantity-skew",
                Some(beta),
                None,
            )
        }
        "class-skew" => {
            forbid(
                partition.beta.is_some(),
                "[partition] beta only applies to scheme = \"quantity-skew\"",
            )?;
            let alpha = partition.alpha.unwrap_or(0.25);
            (
                PartitionScheme::ClassSkew { alpha },
                "class-skew",
                None,
                Some(alpha),
            )
        }
        other => bail!(
            "[partition] scheme = \"{other}\" is not recognized; \
             use \"iid\", \"class-skew\" or \"quantity-skew\""
        ),
    };

    let kind_name = learner.kind.as_deref().unwrap_or("logistic-regression");
    let spec = match kind_name {
        "logistic-regression" => {
            forbid(
                learner.hidden_units.is_some(),
                "[learner] hidden_units only applies to kind = \"mlp\"",
            )?;
            LearnerSpec::logistic_regression(dataset.feature_dim(), dataset.num_classes())
        }
        "mlp" => LearnerSpec::mlp(
            dataset.feature_dim(),
            dataset.num_classes(),
            learner.hidden_units.unwrap_or(16),
        ),
        other => bail!(
            "[learner] kind = \"{other}\" is not recognized; \
             use \"logistic-regression\" or \"mlp\""
        ),
    };

    let hp = Hyperparams {
        learning_rate: train.learning_rate.unwrap_or(defaults.learning_rate),
        batch_size: train.batch_size.unwrap_or(defaults.batch_size),
        top_epochs: train.top_epochs.unwrap_or(defaults.top_epochs),
        local_epochs: train.local_epochs.unwrap_or(defaults.local_epochs),
        rounds: train.rounds.unwrap_or(defaults.rounds),
        lambda_dds: train.lambda_dds.unwrap_or(defaults.lambda_dds),
        lambda_dqs: train.lambda_dqs.unwrap_or(defaults.lambda_dqs),
        top_count,
        // overwritten per run; see `fedtier::seeded_config`
        seed: 0,
    };

    let base = ExperimentConfig {
        learner: spec,
        hp,
        plan: PartitionPlan::new(scheme, robots, 0),
        algorithm: arms[0],
        policy: AssignmentPolicy::default(),
        test_fraction: train.test_fraction.unwrap_or(0.2),
    };

    Ok(Manifest {
        arms,
        seeds: experiment.seeds,
        output_dir: experiment.output_dir,
        base,
        data: dataset,
        data_label,
        scheme_label,
        beta,
        alpha,
    })
}

fn build_dataset(
    data: &DataSection,
    config_path: &Path,
) -> anyhow::Result<(GlobalDataset, String)> {
    match data.source.as_str() {
        "synthetic" => {
            forbid(
                data.path.is_some(),
                "[data] path only applies to source = \"csv\"",
            )?;
            forbid(
                data.label_column.is_some(),
                "[data] label_column only applies to source = \"csv\"",
            )?;
            forbid(
                data.feature_columns.is_some(),
                "[data] feature_columns only applies to source = \"csv\"",
            )?;
            let set = generate_synthetic(
                data.classes.unwrap_or(7),
                data.features.unwrap_or(10),
                data.per_class.unwrap_or(60),
                data.separation.unwrap_or(2.0),
                data.seed.unwrap_or(7),
            )
            .map_err(|e| anyhow!("[data] {e}"))?;
            Ok((set, "synthetic".into()))
        }
        "csv" => {
            for (given, key) in [
                (data.classes.is_some(), "classes"),
                (data.features.is_some(), "features"),
                (data.per_class.is_some(), "per_class"),
                (data.separation.is_some(), "separation"),
                (data.seed.is_some(), "seed"),
            ] {
                forbid(
                    given,
                    &format!("[data] {key} only applies to source = \"synthetic\""),
                )?;
            }
            let rel = data
                .path
                .clone()
                .ok_or_else(|| anyhow!("[data] path is required when source = \"csv\""))?;
            let label = data
                .label_column
                .clone()
                .ok_or_else(|| anyhow!("[data] label_column is required when source = \"csv\""))?;
            let mut schema = CsvSchema::with_label(label);
            if let Some(cols) = data.feature_columns.clone() {
                schema = schema.features(cols);
            }
            // relative paths are resolved against the manifest's directory
            let full = if rel.is_absolute() {
                rel
            } else {
                config_path
                    .parent()
                    .unwrap_or_else(|| Path::new("."))
                    .join(rel)
            };
            let set = load_csv(&full, &schema)
                .map_err(|e| anyhow!("[data] {}: {e}", full.display()))?;
            Ok((set, full.display().to_string()))
        }
        other => bail!("[data] source = \"{other}\" is not recognized; use \"synthetic\" or \"csv\""),
    }
}

/// Outcome of `validate`: human-readable report lines plus counters for
/// the closing summary line.
pub struct ValidationReport {
    pub lines: Vec<String>,
    pub passed: usize,
    pub warnings: usize,
    pub infeasible: usize,
}

/// Dry-run checks over a resolved manifest: dimensions, arm feasibility,
/// and the exact splits and tier layouts the runs would use. No training
/// happens here.
pub fn validate_manifest(m: &Manifest) -> ValidationReport {
    let mut lines = Vec::new();
    let mut passed = 0usize;
    let mut warnings = 0usize;
    let mut infeasible = 0usize;

    lines.push(format!(
        "OK: data {} ({} samples, {} classes, {} features)",
        m.data_label,
        m.data.len(),
        m.data.num_classes(),
        m.data.feature_dim()
    ));
    passed += 1;
    lines.push(format!(
        "OK: learner has {} parameters",
        m.base.learner.param_count()
    ));
    passed += 1;

    if let Some(beta) = m.beta {
        if beta >= 1.0 {
            lines.push(
                "WARNING: beta = 1 sends every sample to the top tier, \
                 leaving empty low-level robots"
                    .into(),
            );
            warnings += 1;
        }
        if beta <= 0.0 {
            lines.push(
                "WARNING: beta = 0 sends every sample to the low tier, \
                 leaving empty top-level robots"
                    .into(),
            );
            warnings += 1;
        }
    }

    for &arm in &m.arms {
        let cfg = m.config_for(arm);
        match cfg.validate() {
            Ok(()) => {
                lines.push(format!("OK: arm {} is runnable", arm.name()));
                passed += 1;
            }
            Err(e) => {
                lines.push(format!("INFEASIBLE: arm {}: {e}", arm.name()));
                infeasible += 1;
            }
        }
    }

    // the exact split, partition, and tier layout each seed would see;
    // a tiered arm is preferred so the layout check is included
    let runnable: Vec<Algorithm> = m
        .arms
        .iter()
        .copied()
        .filter(|&a| m.config_for(a).validate().is_ok())
        .collect();
    let picked = runnable
        .iter()
        .copied()
        .find(|a| a.is_tiered())
        .or_else(|| runnable.first().copied());
    if let Some(arm) = picked {
        for &seed in &m.seeds {
            let cfg = seeded_config(&m.config_for(arm), seed);
            match dry_run(&cfg, &m.data) {
                Ok((skew, tiers)) => {
                    let empty: Vec<String> = skew
                        .rows
                        .iter()
                        .filter(|r| r.empty)
                        .map(|r| r.robot_id.to_string())
                        .collect();
                    if empty.is_empty() {
                        lines.push(format!(
                            "OK: seed {seed} partitions {} samples over {} robots",
                            skew.total(),
                            skew.rows.len()
                        ));
                        passed += 1;
                    } else {
                        lines.push(format!(
                            "WARNING: seed {seed} leaves robots {} with empty datasets",
                            empty.join(", ")
                        ));
                        warnings += 1;
                    }
                    if let Some(t) = tiers {
                        lines.push(format!(
                            "OK: seed {seed} selects top robots {}",
                            t.top
                                .iter()
                                .map(|id| id.to_string())
                                .collect::<Vec<_>>()
                                .join(", ")
                        ));
                        passed += 1;
                    }
                }
                Err(e) => {
                    lines.push(format!("INFEASIBLE: seed {seed}: {e}"));
                    infeasible += 1;
                }
            }
        }
    }

    ValidationReport {
        lines,
        passed,
        warnings,
        infeasible,
    }
}
