//! Desk-scale simulator for multi-tier federated learning on robot fleets.
//!
//! The library models a fleet of `n` robots holding skewed shards of a
//! classification dataset. Robots are ranked by a data-distribution score
//! (how balanced their class mix is) and a data-quantity score (how much
//! they hold); the `j` best become top-level robots, each serving a
//! low-level set. Training alternates top-level refinement, low-level local
//! SGD, and a two-step weighted aggregation — at the same per-round
//! communication cost as single-tier federated averaging, which the message
//! ledger verifies parameter by parameter.
//!
//! Modules:
//!
//! - [`model`]: logistic-regression and one-hidden-layer MLP learners over
//!   flat `f64` parameter vectors, with seeded local SGD.
//! - [`data`]: synthetic Gaussian tasks, CSV ingestion, IID / quantity-skew
//!   / class-skew partitioners, and the stratified test split.
//! - [`ranking`]: per-robot scores, top-tier selection, low-level sets.
//! - [`aggregation`]: sample-weighted averaging (flat, tiered, and
//!   step-normalized).
//! - [`orchestrator`]: the full training loops and multi-seed comparisons.
//! - [`netledger`]: simulated message layer with exact traffic accounting.
//! - [`rng`]: the seeded generator behind every stochastic choice.
//!
//! Everything is deterministic: a run is a pure function of its config and
//! dataset, and repeated runs match byte for byte.

pub mod aggregation;
pub mod data;
pub mod error;
pub mod model;
pub mod netledger;
pub mod orchestrator;
pub mod ranking;
pub mod rng;

pub use aggregation::{aggregate_server, aggregate_tier, fedavg, fednova, WeightedModel};
pub use data::{
    generate_synthetic, load_csv, partition, partition_class_skew, partition_iid,
    partition_quantity_skew, skew_report, stratified_split, ClientDataset, CsvSchema,
    GlobalDataset, PartitionPlan, PartitionScheme, SkewReport, SkewRow,
};
pub use error::{Error, Result};
pub use model::{
    evaluate, init_model, local_update, loss_and_grad, Hyperparams, LabeledSample, LearnerKind,
    LearnerSpec, ModelParams, UpdateContext,
};
pub use netledger::{CommLedger, LinkClass, Message, NodeId, PayloadKind};
pub use orchestrator::{
    compare_arms, dry_run, records_jsonl, run_experiment, run_mtf_grasp, run_vanilla,
    seeded_config, Algorithm, ArmSummary, ComparisonTable, ExperimentConfig, RoundRecord,
    RunOutput,
};
pub use ranking::{
    compute_dds, compute_dqs, compute_is, rank_robots, ranking_report_jsonl, select_tiers,
    AssignmentPolicy, RankingScores, TierAssignment,
};
pub use rng::{derive_seed, SplitMix64};
