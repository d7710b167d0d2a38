//! Dataset types, synthetic data generation, CSV ingestion, and the
//! partitioners that split a global dataset across the robot fleet.
//!
//! Three partition schemes are supported:
//!
//! - IID: seeded global shuffle, then a round-robin deal.
//! - Quantity skew: per class, a `beta` share of the samples is split evenly
//!   among the first `top_count` robots and the rest evenly among the others.
//! - Class skew: per class `c`, a `1 - alpha` share goes to a dominant robot
//!   (`c mod n`, fixed so the mapping is seed-independent) and the rest is
//!   split evenly among the remaining robots.
//!
//! Every scheme conserves the global multiset exactly: skewed shares are
//! floored and remainders handed one-by-one to the lowest-index eligible
//! robot. Empty robots are legal outputs (e.g. quantity skew at `beta = 1`);
//! downstream code must handle them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LabeledSample;
use crate::rng::{derive_seed, SplitMix64};

/// The full training corpus before partitioning.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDataset {
    samples: Vec<LabeledSample>,
    num_classes: usize,
    feature_dim: usize,
}

impl GlobalDataset {
    /// Validates that samples are nonempty, share one feature dimension, and
    /// carry labels below `num_classes`.
    pub fn new(samples: Vec<LabeledSample>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidConfig("num_classes must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidConfig("dataset has no samples".into()));
        }
        let feature_dim = samples[0].features.len();
        for sample in &samples {
            if sample.features.len() != feature_dim {
                return Err(Error::DimMismatch {
                    expected: feature_dim,
                    got: sample.features.len(),
                });
            }
            if sample.label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: sample.label,
                    num_classes,
                });
            }
        }
        Ok(Self {
            samples,
            num_classes,
            feature_dim,
        })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Sample indices grouped by class, ascending within each class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut index = vec![Vec::new(); self.num_classes];
        for (i, sample) in self.samples.iter().enumerate() {
            index[sample.label].push(i);
        }
        index
    }

    pub fn class_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.num_classes];
        for sample in &self.samples {
            counts[sample.label] += 1;
        }
        counts
    }
}

/// One robot's local shard of the corpus. May be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub robot_id: u64,
    pub samples: Vec<LabeledSample>,
    class_counts: Vec<u64>,
}

impl ClientDataset {
    pub fn new(robot_id: u64, samples: Vec<LabeledSample>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidConfig("num_classes must be positive".into()));
        }
        let mut class_counts = vec![0u64; num_classes];
        for sample in &samples {
            if sample.label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: sample.label,
                    num_classes,
                });
            }
            class_counts[sample.label] += 1;
        }
        Ok(Self {
            robot_id,
            samples,
            class_counts,
        })
    }

    /// Per-class sample counts; length equals the class count of the task.
    pub fn class_counts(&self) -> &[u64] {
        &self.class_counts
    }

    pub fn total(&self) -> u64 {
        self.samples.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// How the global dataset is split across robots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PartitionScheme {
    Iid,
    /// Class `c`'s dominant share `1 - alpha` goes to robot `c mod n`.
    ClassSkew { alpha: f64 },
    /// A `beta` share of every class goes to robots `0..top_count`.
    QuantitySkew { beta: f64, top_count: usize },
}

/// A complete, reproducible partitioning instruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub scheme: PartitionScheme,
    pub robots: usize,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn new(scheme: PartitionScheme, robots: usize, seed: u64) -> Self {
        Self {
            scheme,
            robots,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.robots == 0 {
            return Err(Error::InvalidPlan("robot count must be positive".into()));
        }
        match self.scheme {
            PartitionScheme::Iid => {}
            PartitionScheme::ClassSkew { alpha } => {
                if self.robots < 2 {
                    return Err(Error::InvalidPlan(
                        "class skew needs at least two robots".into(),
                    ));
                }
                if !(alpha.is_finite() && (0.0..=1.0).contains(&alpha)) {
                    return Err(Error::InvalidPlan(format!(
                        "alpha must lie in [0, 1], got {alpha}"
                    )));
                }
            }
            PartitionScheme::QuantitySkew { beta, top_count } => {
                if !(beta.is_finite() && (0.0..=1.0).contains(&beta)) {
                    return Err(Error::InvalidPlan(format!(
                        "beta must lie in [0, 1], got {beta}"
                    )));
                }
                if top_count == 0 || top_count >= self.robots {
                    return Err(Error::InvalidPlan(format!(
                        "top_count must satisfy 1 <= top_count < robots, got {top_count} of {}",
                        self.robots
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generates Gaussian class clusters: class `c` is centred on axis
/// `c mod d` at distance `separation * (1 + c div d)` from the origin with
/// unit isotropic noise, so later classes wrap onto earlier axes at larger
/// radii. Samples come out class-major (all of class 0, then class 1, ...),
/// `per_class` each, deterministic given `seed`.
pub fn generate_synthetic(
    classes: usize,
    feature_dim: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<GlobalDataset> {
    if classes < 2 {
        return Err(Error::InvalidConfig(
            "synthetic task needs at least two classes".into(),
        ));
    }
    if feature_dim == 0 {
        return Err(Error::InvalidConfig("feature_dim must be positive".into()));
    }
    if per_class == 0 {
        return Err(Error::InvalidConfig("per_class must be positive".into()));
    }
    if !(separation.is_finite() && separation >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "separation must be finite and nonnegative, got {separation}"
        )));
    }
    let mut samples = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        let mut rng = SplitMix64::new(derive_seed(seed, &[c as u64]));
        let axis = c % feature_dim;
        let radius = separation * (1.0 + (c / feature_dim) as f64);
        for _ in 0..per_class {
            let mut features: Vec<f64> =
                (0..feature_dim).map(|_| rng.next_gaussian()).collect();
            features[axis] += radius;
            samples.push(LabeledSample::new(features, c));
        }
    }
    GlobalDataset::new(samples, classes)
}

/// Column selection for [`load_csv`]. With `feature_columns = None`, every
/// non-label column becomes a feature, in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub label_column: String,
    pub feature_columns: Option<Vec<String>>,
}

impl CsvSchema {
    pub fn with_label(label_column: impl Into<String>) -> Self {
        Self {
            label_column: label_column.into(),
            feature_columns: None,
        }
    }

    pub fn features(mut self, columns: Vec<String>) -> Self {
        self.feature_columns = Some(columns);
        self
    }
}

fn csv_error(err: csv::Error) -> Error {
    if err.is_io_error() {
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::CsvFormat(format!("{other:?}")),
        }
    } else {
        Error::CsvFormat(err.to_string())
    }
}

/// Loads a headered, comma-separated, UTF-8 CSV file. Labels may be
/// arbitrary strings; they map to class indices `0..m-1` by sorted distinct
/// value order. Row order is preserved. Cell errors name the offending data
/// row (1-based) and column.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<GlobalDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(csv_error)?;

    let headers = reader.headers().map_err(csv_error)?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == schema.label_column)
        .ok_or_else(|| {
            Error::CsvFormat(format!("label column '{}' not found", schema.label_column))
        })?;
    let feature_idx: Vec<(usize, String)> = match &schema.feature_columns {
        Some(columns) => columns
            .iter()
            .map(|name| {
                headers
                    .iter()
                    .position(|h| h == name)
                    .map(|i| (i, name.clone()))
                    .ok_or_else(|| {
                        Error::CsvFormat(format!("feature column '{name}' not found"))
                    })
            })
            .collect::<Result<_>>()?,
        None => headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != label_idx)
            .map(|(i, name)| (i, name.to_string()))
            .collect(),
    };
    if feature_idx.is_empty() {
        return Err(Error::CsvFormat("no feature columns selected".into()));
    }

    let mut rows: Vec<(Vec<f64>, String)> = Vec::new();
    for (row_num, record) in reader.records().enumerate() {
        let row = row_num + 1; // 1-based data row, excluding the header
        let record = record.map_err(csv_error)?;
        let mut features = Vec::with_capacity(feature_idx.len());
        for (idx, name) in &feature_idx {
            let cell = record.get(*idx).ok_or_else(|| Error::CsvCell {
                row,
                column: name.clone(),
                reason: "missing value".into(),
            })?;
            let value: f64 = cell.parse().map_err(|_| Error::CsvCell {
                row,
                column: name.clone(),
                reason: format!("not a number: '{cell}'"),
            })?;
            if !value.is_finite() {
                return Err(Error::CsvCell {
                    row,
                    column: name.clone(),
                    reason: format!("not finite: '{cell}'"),
                });
            }
            features.push(value);
        }
        let label = record.get(label_idx).ok_or_else(|| Error::CsvCell {
            row,
            column: schema.label_column.clone(),
            reason: "missing value".into(),
        })?;
        rows.push((features, label.to_string()));
    }
    if rows.is_empty() {
        return Err(Error::CsvFormat("no data rows".into()));
    }

    let mut label_map: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, label) in &rows {
        let next = label_map.len();
        label_map.entry(label.as_str()).or_insert(next);
    }
    // BTreeMap iterates sorted; re-number so indices follow sorted order.
    for (rank, (_, idx)) in label_map.iter_mut().enumerate() {
        *idx = rank;
    }
    let label_map: BTreeMap<String, usize> = label_map
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();

    let num_classes = label_map.len();
    let samples = rows
        .into_iter()
        .map(|(features, label)| LabeledSample::new(features, label_map[&label]))
        .collect();
    GlobalDataset::new(samples, num_classes)
}

/// Floors `fraction * count`, snapping to the nearest integer first when the
/// product sits within 1e-9 of one. Decimal fractions like 0.7 have no exact
/// binary representation, so a naive floor of `0.7 * 100.0` would yield 69;
/// the snap restores the exact arithmetic the share rules are defined by.
fn floored_share(fraction: f64, count: usize) -> usize {
    let raw = fraction * count as f64;
    let nearest = raw.round();
    let exact = if (raw - nearest).abs() < 1e-9 {
        nearest
    } else {
        raw.floor()
    };
    exact as usize
}

/// Spreads `total` items over `slots` as evenly as possible, giving the
/// leftover one-by-one to the lowest slots. Returns per-slot counts.
fn even_shares(total: usize, slots: usize) -> Vec<usize> {
    let base = total / slots;
    let rem = total % slots;
    (0..slots).map(|i| base + usize::from(i < rem)).collect()
}

/// Builds the per-robot datasets from per-robot/per-class count matrices by
/// slicing each class's seeded shuffle contiguously in robot order.
fn assemble(
    g: &GlobalDataset,
    counts: &[Vec<usize>], // counts[robot][class]
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    let class_indices = g.class_indices();
    let robots = counts.len();
    let mut per_robot: Vec<Vec<usize>> = vec![Vec::new(); robots];
    for (c, indices) in class_indices.iter().enumerate() {
        let mut shuffled = indices.clone();
        SplitMix64::new(derive_seed(seed, &[c as u64])).shuffle(&mut shuffled);
        let mut cursor = 0;
        for (r, robot_counts) in counts.iter().enumerate() {
            let take = robot_counts[c];
            per_robot[r].extend_from_slice(&shuffled[cursor..cursor + take]);
            cursor += take;
        }
        debug_assert_eq!(cursor, shuffled.len(), "class {c} not fully assigned");
    }
    per_robot
        .into_iter()
        .enumerate()
        .map(|(r, indices)| {
            let samples = indices.iter().map(|&i| g.samples[i].clone()).collect();
            ClientDataset::new(r as u64, samples, g.num_classes)
        })
        .collect()
}

/// Seeded shuffle of all samples followed by a round-robin deal; robot sizes
/// differ by at most one. Requires `n <= |g|` so no robot starts empty.
pub fn partition_iid(g: &GlobalDataset, n: usize, seed: u64) -> Result<Vec<ClientDataset>> {
    if n == 0 {
        return Err(Error::InvalidPlan("robot count must be positive".into()));
    }
    if n > g.len() {
        return Err(Error::InvalidPlan(format!(
            "cannot deal {} samples to {n} robots",
            g.len()
        )));
    }
    let mut order: Vec<usize> = (0..g.len()).collect();
    SplitMix64::new(seed).shuffle(&mut order);
    let mut per_robot: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (pos, &idx) in order.iter().enumerate() {
        per_robot[pos % n].push(idx);
    }
    per_robot
        .into_iter()
        .enumerate()
        .map(|(r, indices)| {
            let samples = indices.iter().map(|&i| g.samples[i].clone()).collect();
            ClientDataset::new(r as u64, samples, g.num_classes)
        })
        .collect()
}

/// Per class, a `beta` share (floored) is split as evenly as possible among
/// robots `0..j` and the remainder as evenly as possible among robots
/// `j..n`. `beta = 1` leaves robots `j..n` empty; `beta = 0` leaves robots
/// `0..j` empty.
pub fn partition_quantity_skew(
    g: &GlobalDataset,
    n: usize,
    j: usize,
    beta: f64,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    PartitionPlan::new(PartitionScheme::QuantitySkew { beta, top_count: j }, n, seed)
        .validate()?;
    let class_counts = g.class_counts();
    let mut counts = vec![vec![0usize; g.num_classes]; n];
    for (c, &cnt) in class_counts.iter().enumerate() {
        let cnt = cnt as usize;
        let top_share = floored_share(beta, cnt);
        let top = even_shares(top_share, j);
        let low = even_shares(cnt - top_share, n - j);
        for (r, robot_counts) in counts.iter_mut().enumerate() {
            robot_counts[c] = if r < j { top[r] } else { low[r - j] };
        }
    }
    assemble(g, &counts, seed)
}

/// Per class `c`, a `1 - alpha` share (floored) goes to the dominant robot
/// `c mod n`; the rest is split as evenly as possible among the other
/// `n - 1` robots. `alpha = 0` with `m <= n` gives disjoint class ownership.
pub fn partition_class_skew(
    g: &GlobalDataset,
    n: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    PartitionPlan::new(PartitionScheme::ClassSkew { alpha }, n, seed).validate()?;
    let class_counts = g.class_counts();
    let mut counts = vec![vec![0usize; g.num_classes]; n];
    for (c, &cnt) in class_counts.iter().enumerate() {
        let cnt = cnt as usize;
        let home = c % n;
        let dominant = floored_share(1.0 - alpha, cnt);
        let spread = even_shares(cnt - dominant, n - 1);
        let mut slot = 0;
        for (r, robot_counts) in counts.iter_mut().enumerate() {
            robot_counts[c] = if r == home {
                dominant
            } else {
                let share = spread[slot];
                slot += 1;
                share
            };
        }
    }
    assemble(g, &counts, seed)
}

/// Dispatches to the scheme named by the plan.
pub fn partition(g: &GlobalDataset, plan: &PartitionPlan) -> Result<Vec<ClientDataset>> {
    plan.validate()?;
    match plan.scheme {
        PartitionScheme::Iid => partition_iid(g, plan.robots, plan.seed),
        PartitionScheme::ClassSkew { alpha } => {
            partition_class_skew(g, plan.robots, alpha, plan.seed)
        }
        PartitionScheme::QuantitySkew { beta, top_count } => {
            partition_quantity_skew(g, plan.robots, top_count, beta, plan.seed)
        }
    }
}

/// One robot's row in a [`SkewReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkewRow {
    pub robot_id: u64,
    pub total: u64,
    pub class_counts: Vec<u64>,
    pub empty: bool,
}

/// Per-robot class-count matrix describing how skewed a partition came out.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkewReport {
    pub num_classes: usize,
    pub rows: Vec<SkewRow>,
}

impl SkewReport {
    pub fn total(&self) -> u64 {
        self.rows.iter().map(|r| r.total).sum()
    }
}

/// Summarizes a partition as per-robot class counts, flagging empty robots.
pub fn skew_report(parts: &[ClientDataset]) -> Result<SkewReport> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidPlan("skew report needs at least one robot".into()))?;
    let num_classes = first.class_counts().len();
    let mut rows = Vec::with_capacity(parts.len());
    for part in parts {
        if part.class_counts().len() != num_classes {
            return Err(Error::InvalidPlan(
                "robots disagree on the class count".into(),
            ));
        }
        rows.push(SkewRow {
            robot_id: part.robot_id,
            total: part.total(),
            class_counts: part.class_counts().to_vec(),
            empty: part.is_empty(),
        });
    }
    Ok(SkewReport { num_classes, rows })
}

/// Splits the corpus into train/test with the same class mix on both sides:
/// per class, `floor(test_fraction * count)` seeded-random samples become
/// test data. Both halves preserve global sample order.
pub fn stratified_split(
    g: &GlobalDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(GlobalDataset, Vec<LabeledSample>)> {
    if !(test_fraction.is_finite() && test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut test_idx = Vec::new();
    let mut train_idx = Vec::new();
    for (c, indices) in g.class_indices().iter().enumerate() {
        let mut shuffled = indices.clone();
        SplitMix64::new(derive_seed(seed, &[c as u64])).shuffle(&mut shuffled);
        let take = floored_share(test_fraction, shuffled.len());
        test_idx.extend_from_slice(&shuffled[..take]);
        train_idx.extend_from_slice(&shuffled[take..]);
    }
    if test_idx.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    if train_idx.is_empty() {
        return Err(Error::InvalidConfig(
            "test_fraction leaves no training data".into(),
        ));
    }
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    let test = test_idx.iter().map(|&i| g.samples[i].clone()).collect();
    let train = train_idx.iter().map(|&i| g.samples[i].clone()).collect();
    Ok((GlobalDataset::new(train, g.num_classes)?, test))
}
