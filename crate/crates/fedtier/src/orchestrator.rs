//! End-to-end experiment execution: the tiered MTF-Grasp training loop, the
//! single-tier baselines, and multi-seed arm comparison.
//!
//! One MTF-Grasp round proceeds as follows. The server sends the current
//! global model to each top-level robot, which refines it for `top_epochs`
//! and forwards the result to every member of its low-level set. Each
//! member (the top robot included — it trains twice per round, continuing
//! its epoch counter) runs `local_epochs` of local SGD. The tier then
//! aggregates its members' models weighted by raw sample counts, and the
//! server aggregates the tier models weighted by tier totals. The vanilla
//! loop is the same with a single implicit tier: broadcast, local training,
//! one aggregation.
//!
//! Determinism: every stochastic choice (test split, model init, per-epoch
//! batch shuffles) draws from a stream derived from the experiment seed, so
//! a run is a pure function of its config and data. Robots are always
//! visited and aggregated in ascending id order; with all robots promoted
//! to the top tier and `top_epochs = 0`, the tiered loop reproduces the
//! vanilla run bit for bit.
//!
//! Empty robots (a legal partitioner output) skip training but still take
//! part in every model exchange, and enter aggregation with weight zero.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::aggregation::{aggregate_server, aggregate_tier, fedavg, fednova, WeightedModel};
use crate::data::{
    partition, skew_report, stratified_split, ClientDataset, GlobalDataset, PartitionPlan,
    PartitionScheme, SkewReport,
};
use crate::error::{Error, Result};
use crate::model::{
    evaluate, init_model, local_update, Hyperparams, LearnerSpec, ModelParams, UpdateContext,
};
use crate::netledger::{CommLedger, Message, NodeId, PayloadKind};
use crate::ranking::{rank_robots, select_tiers, AssignmentPolicy, RankingScores, TierAssignment};
use crate::rng::derive_seed;

/// Seed-stream tags: the held-out split, the model init, and the per-epoch
/// batch shuffles each draw from a disjoint stream of the experiment seed.
const STREAM_SPLIT: u64 = 0x74_73_65_74; // "test"
const STREAM_INIT: u64 = 0x74_69_6E_69; // "init"
/// Used by [`compare_arms`] to derive each seed's partition stream.
pub(crate) const STREAM_PLAN: u64 = 0x6E_61_6C_70; // "plan"

/// Number of scalar fields in a robot's score report (its distribution
/// score and its sample count).
const SCORES_PAYLOAD: u64 = 2;

/// The four training arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Algorithm {
    FedAvg,
    FedNova,
    MtfGraspAvg,
    MtfGraspNova,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::FedAvg,
        Algorithm::FedNova,
        Algorithm::MtfGraspAvg,
        Algorithm::MtfGraspNova,
    ];

    /// Whether the arm runs the two-tier loop.
    pub fn is_tiered(&self) -> bool {
        matches!(self, Algorithm::MtfGraspAvg | Algorithm::MtfGraspNova)
    }

    /// Whether aggregation normalizes by local step counts.
    pub fn is_normalized(&self) -> bool {
        matches!(self, Algorithm::FedNova | Algorithm::MtfGraspNova)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedNova => "fednova",
            Algorithm::MtfGraspAvg => "mtf-grasp-avg",
            Algorithm::MtfGraspNova => "mtf-grasp-nova",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .iter()
            .find(|a| a.name() == s)
            .copied()
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown algorithm '{s}' (expected one of: fedavg, fednova, \
                     mtf-grasp-avg, mtf-grasp-nova)"
                ))
            })
    }
}

/// Everything one run needs besides the dataset itself.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub learner: LearnerSpec,
    pub hp: Hyperparams,
    pub plan: PartitionPlan,
    pub algorithm: Algorithm,
    pub policy: AssignmentPolicy,
    /// Share of the global dataset held out for evaluation, in (0, 1).
    pub test_fraction: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.learner.validate()?;
        self.hp.validate()?;
        self.plan.validate()?;
        if !(self.test_fraction.is_finite()
            && self.test_fraction > 0.0
            && self.test_fraction < 1.0)
        {
            return Err(Error::InvalidConfig(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if let PartitionScheme::QuantitySkew { top_count, .. } = self.plan.scheme {
            if top_count != self.hp.top_count {
                return Err(Error::InvalidConfig(format!(
                    "partition plan and hyperparameters disagree on the top-robot \
                     count ({top_count} vs {})",
                    self.hp.top_count
                )));
            }
        }
        if self.algorithm.is_tiered() && self.hp.top_count > self.plan.robots {
            return Err(Error::TopCountExceedsFleet {
                j: self.hp.top_count,
                n: self.plan.robots,
            });
        }
        Ok(())
    }
}

/// Metrics captured at the end of one round.
#[derive(Debug, Clone, Serialize)]
pub struct RoundRecord {
    pub round: u64,
    pub global_accuracy: f64,
    /// Each robot's end-of-round local model evaluated on the shared test
    /// set, keyed by robot id.
    pub per_robot_accuracy: BTreeMap<u64, f64>,
    /// Model parameters transferred this round, from the ledger.
    pub comm_params: u64,
    /// Wall-clock seconds for the round. Excluded from serialization so
    /// that identical runs produce byte-identical output files.
    #[serde(skip)]
    pub wall_time: f64,
}

/// A finished run: per-round metrics plus the artifacts behind them.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub final_model: ModelParams,
    /// Ranking scores (tiered arms only).
    pub scores: Option<Vec<RankingScores>>,
    /// Tier layout (tiered arms only).
    pub tiers: Option<TierAssignment>,
    pub skew: SkewReport,
    pub ledger: CommLedger,
}

/// Serializes round records as one JSON object per line (wall time
/// excluded), the library-level export consumed by the CLI.
pub fn records_jsonl(records: &[RoundRecord]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("plain struct serializes"));
        out.push('\n');
    }
    out
}

/// Mini-batch steps one robot executes per training call.
fn local_steps(samples: usize, epochs: u64, batch_size: usize) -> u64 {
    epochs * (samples.div_ceil(batch_size)) as u64
}

/// Trains one robot for `epochs`, treating an empty robot as a no-op that
/// passes the incoming model through.
fn train_robot(
    w: &ModelParams,
    cfg: &ExperimentConfig,
    part: &ClientDataset,
    epochs: u64,
    round: u64,
    epoch_offset: u64,
) -> Result<ModelParams> {
    if part.is_empty() {
        return Ok(w.clone());
    }
    let ctx = UpdateContext::new(part.robot_id, round).with_epoch_offset(epoch_offset);
    local_update(w, &cfg.learner, part, epochs, &cfg.hp, ctx)
}

/// Shared setup: hold out the test split, partition the rest, initialize
/// the model. Identical seeds give identical setup across arms.
fn prepare(
    cfg: &ExperimentConfig,
    data: &GlobalDataset,
) -> Result<(Vec<ClientDataset>, Vec<crate::model::LabeledSample>, ModelParams)> {
    cfg.validate()?;
    let (train, test) =
        stratified_split(data, cfg.test_fraction, derive_seed(cfg.hp.seed, &[STREAM_SPLIT]))?;
    let parts = partition(&train, &cfg.plan)?;
    let w0 = init_model(&cfg.learner, derive_seed(cfg.hp.seed, &[STREAM_INIT]))?;
    Ok((parts, test, w0))
}

/// Everything a run would set up, without any training: the per-robot
/// skew report and, for tiered arms, the tier layout. Lets callers check
/// feasibility (and spot empty robots) cheaply against the exact split
/// and partition a real run of this config would use.
pub fn dry_run(
    cfg: &ExperimentConfig,
    data: &GlobalDataset,
) -> Result<(SkewReport, Option<TierAssignment>)> {
    let (parts, _test, _w0) = prepare(cfg, data)?;
    let skew = skew_report(&parts)?;
    let tiers = if cfg.algorithm.is_tiered() {
        let scores = rank_robots(&parts, cfg.hp.lambda_dds, cfg.hp.lambda_dqs)?;
        Some(select_tiers(&scores, cfg.hp.top_count, &cfg.policy)?)
    } else {
        None
    };
    Ok((skew, tiers))
}

/// Runs the two-tier protocol: rank robots by data quality and quantity,
/// select the top tier, then alternate top-level refinement, low-level
/// training, and two-step aggregation for `hp.rounds` rounds. After the
/// last round the final model is broadcast down the hierarchy (recorded
/// under round index `hp.rounds`, outside the per-round accounting).
pub fn run_mtf_grasp(cfg: &ExperimentConfig, data: &GlobalDataset) -> Result<RunOutput> {
    if !cfg.algorithm.is_tiered() {
        return Err(Error::InvalidConfig(format!(
            "algorithm {} is not a tiered arm",
            cfg.algorithm
        )));
    }
    let (parts, test, mut w) = prepare(cfg, data)?;
    let dim = cfg.learner.param_count() as u64;
    let mut ledger = CommLedger::new();

    // setup: every robot reports its scores to the server once
    let scores = rank_robots(&parts, cfg.hp.lambda_dds, cfg.hp.lambda_dqs)?;
    for part in &parts {
        ledger.record(Message::new(
            NodeId::Robot(part.robot_id),
            NodeId::Server,
            PayloadKind::Scores,
            SCORES_PAYLOAD,
            0,
        ));
    }
    let tiers = select_tiers(&scores, cfg.hp.top_count, &cfg.policy)?;

    let part_of = |robot_id: u64| -> &ClientDataset {
        &parts[robot_id as usize] // partition() emits ids 0..n in order
    };

    let mut records = Vec::with_capacity(cfg.hp.rounds as usize);
    for round in 0..cfg.hp.rounds {
        let started = Instant::now();
        let mut local_models: BTreeMap<u64, ModelParams> = BTreeMap::new();
        let mut tier_models: Vec<(ModelParams, u64)> = Vec::with_capacity(tiers.top.len());

        // BTreeMap iteration keeps tier processing in ascending top-robot
        // id order, which makes aggregation order reproducible
        for (&t, members) in &tiers.low_sets {
            ledger.record(Message::new(
                NodeId::Server,
                NodeId::Robot(t),
                PayloadKind::Model,
                dim,
                round,
            ));
            let seed_model = train_robot(&w, cfg, part_of(t), cfg.hp.top_epochs, round, 0)?;

            let mut member_models = Vec::with_capacity(members.len());
            for &r in members {
                ledger.record(Message::new(
                    NodeId::Robot(t),
                    NodeId::Robot(r),
                    PayloadKind::Model,
                    dim,
                    round,
                ));
                // the top robot continues its own epoch counter so its two
                // training phases never reuse a shuffle
                let offset = if r == t { cfg.hp.top_epochs } else { 0 };
                let part = part_of(r);
                let local = train_robot(&seed_model, cfg, part, cfg.hp.local_epochs, round, offset)?;
                ledger.record(Message::new(
                    NodeId::Robot(r),
                    NodeId::Robot(t),
                    PayloadKind::Model,
                    dim,
                    round,
                ));
                let steps = local_steps(part.samples.len(), cfg.hp.local_epochs, cfg.hp.batch_size);
                member_models
                    .push(WeightedModel::new(local.clone(), part.total() as f64).with_steps(steps));
                local_models.insert(r, local);
            }

            let tier_total: u64 = members.iter().map(|&r| part_of(r).total()).sum();
            let tier_model = if tier_total == 0 {
                // a dataless tier forwards its seed model with zero weight
                seed_model.clone()
            } else if cfg.algorithm.is_normalized() {
                fednova(&seed_model, &member_models)?
            } else {
                aggregate_tier(&member_models)?
            };
            ledger.record(Message::new(
                NodeId::Robot(t),
                NodeId::Server,
                PayloadKind::Model,
                dim,
                round,
            ));
            tier_models.push((tier_model, tier_total));
        }

        w = aggregate_server(&tier_models)?;

        let global_accuracy = evaluate(&w, &cfg.learner, &test)?;
        let per_robot_accuracy = local_models
            .iter()
            .map(|(&r, model)| Ok((r, evaluate(model, &cfg.learner, &test)?)))
            .collect::<Result<BTreeMap<u64, f64>>>()?;
        records.push(RoundRecord {
            round,
            global_accuracy,
            per_robot_accuracy,
            comm_params: ledger.round_model_traffic(round)?,
            wall_time: started.elapsed().as_secs_f64(),
        });
    }

    // one-time downstream broadcast of the final model, via the hierarchy
    if cfg.hp.rounds > 0 {
        let final_round = cfg.hp.rounds;
        for (&t, members) in &tiers.low_sets {
            ledger.record(Message::new(
                NodeId::Server,
                NodeId::Robot(t),
                PayloadKind::Model,
                dim,
                final_round,
            ));
            for &r in members {
                ledger.record(Message::new(
                    NodeId::Robot(t),
                    NodeId::Robot(r),
                    PayloadKind::Model,
                    dim,
                    final_round,
                ));
            }
        }
    }

    Ok(RunOutput {
        records,
        final_model: w,
        scores: Some(scores),
        tiers: Some(tiers),
        skew: skew_report(&parts)?,
        ledger,
    })
}

/// Runs the single-tier baseline loop: broadcast, local training on every
/// robot, one aggregation (sample-weighted or step-normalized per the arm).
pub fn run_vanilla(cfg: &ExperimentConfig, data: &GlobalDataset) -> Result<RunOutput> {
    if cfg.algorithm.is_tiered() {
        return Err(Error::InvalidConfig(format!(
            "algorithm {} is not a single-tier arm",
            cfg.algorithm
        )));
    }
    let (parts, test, mut w) = prepare(cfg, data)?;
    let dim = cfg.learner.param_count() as u64;
    let mut ledger = CommLedger::new();

    let mut records = Vec::with_capacity(cfg.hp.rounds as usize);
    for round in 0..cfg.hp.rounds {
        let started = Instant::now();
        let mut models = Vec::with_capacity(parts.len());
        let mut local_models: BTreeMap<u64, ModelParams> = BTreeMap::new();
        for part in &parts {
            ledger.record(Message::new(
                NodeId::Server,
                NodeId::Robot(part.robot_id),
                PayloadKind::Model,
                dim,
                round,
            ));
            let local = train_robot(&w, cfg, part, cfg.hp.local_epochs, round, 0)?;
            ledger.record(Message::new(
                NodeId::Robot(part.robot_id),
                NodeId::Server,
                PayloadKind::Model,
                dim,
                round,
            ));
            let steps = local_steps(part.samples.len(), cfg.hp.local_epochs, cfg.hp.batch_size);
            models.push(WeightedModel::new(local.clone(), part.total() as f64).with_steps(steps));
            local_models.insert(part.robot_id, local);
        }

        w = if cfg.algorithm.is_normalized() {
            fednova(&w, &models)?
        } else {
            fedavg(&models)?
        };

        let global_accuracy = evaluate(&w, &cfg.learner, &test)?;
        let per_robot_accuracy = local_models
            .iter()
            .map(|(&r, model)| Ok((r, evaluate(model, &cfg.learner, &test)?)))
            .collect::<Result<BTreeMap<u64, f64>>>()?;
        records.push(RoundRecord {
            round,
            global_accuracy,
            per_robot_accuracy,
            comm_params: ledger.round_model_traffic(round)?,
            wall_time: started.elapsed().as_secs_f64(),
        });
    }

    Ok(RunOutput {
        records,
        final_model: w,
        scores: None,
        tiers: None,
        skew: skew_report(&parts)?,
        ledger,
    })
}

/// Dispatches to the loop matching the configured arm.
pub fn run_experiment(cfg: &ExperimentConfig, data: &GlobalDataset) -> Result<RunOutput> {
    if cfg.algorithm.is_tiered() {
        run_mtf_grasp(cfg, data)
    } else {
        run_vanilla(cfg, data)
    }
}

/// One arm's statistics over all comparison seeds.
#[derive(Debug, Clone, Serialize)]
pub struct ArmSummary {
    pub algorithm: Algorithm,
    /// Final-round global accuracy per seed, aligned with the seed list.
    pub per_seed_final: Vec<f64>,
    /// Best-round global accuracy per seed.
    pub per_seed_best: Vec<f64>,
    pub final_mean: f64,
    pub final_std: f64,
    pub best_mean: f64,
    pub best_std: f64,
    /// Final-round per-robot accuracy, averaged over seeds.
    pub per_robot_mean: BTreeMap<u64, f64>,
    /// Model parameters transferred per run, averaged over seeds.
    pub comm_total_mean: f64,
}

/// Cross-arm comparison on shared seeds.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonTable {
    pub seeds: Vec<u64>,
    pub arms: Vec<ArmSummary>,
}

/// Applies one comparison seed to a config: the experiment seed becomes the
/// seed itself and the partition stream is derived from it, so every arm
/// sharing a seed sees the same split, partition, and initial model.
pub fn seeded_config(cfg: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    let mut seeded = cfg.clone();
    seeded.hp.seed = seed;
    seeded.plan.seed = derive_seed(seed, &[STREAM_PLAN]);
    seeded
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Runs every arm on every seed and summarizes. All configs must agree on
/// everything but the algorithm so the arms see identical splits,
/// partitions, and initial models for each seed.
pub fn compare_arms(
    cfgs: &[ExperimentConfig],
    data: &GlobalDataset,
    seeds: &[u64],
) -> Result<ComparisonTable> {
    if cfgs.is_empty() {
        return Err(Error::InconsistentArms("no arms given".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("no seeds given".into()));
    }
    let reference = &cfgs[0];
    if reference.hp.rounds == 0 {
        return Err(Error::InvalidConfig(
            "comparison requires at least one round".into(),
        ));
    }
    for cfg in cfgs {
        cfg.validate()?;
        if cfg.learner != reference.learner {
            return Err(Error::InconsistentArms("arms disagree on learner".into()));
        }
        if cfg.hp != reference.hp {
            return Err(Error::InconsistentArms(
                "arms disagree on hyperparameters".into(),
            ));
        }
        if cfg.plan != reference.plan {
            return Err(Error::InconsistentArms(
                "arms disagree on partition plan".into(),
            ));
        }
        if cfg.policy != reference.policy {
            return Err(Error::InconsistentArms(
                "arms disagree on assignment policy".into(),
            ));
        }
        if cfg.test_fraction != reference.test_fraction {
            return Err(Error::InconsistentArms(
                "arms disagree on test fraction".into(),
            ));
        }
    }

    let mut arms = Vec::with_capacity(cfgs.len());
    // identical seeds must give identical partitions across arms; the skew
    // report is a cheap fingerprint of that contract
    let mut skew_by_seed: BTreeMap<u64, SkewReport> = BTreeMap::new();
    for cfg in cfgs {
        let mut per_seed_final = Vec::with_capacity(seeds.len());
        let mut per_seed_best = Vec::with_capacity(seeds.len());
        let mut comm_totals = Vec::with_capacity(seeds.len());
        let mut robot_sums: BTreeMap<u64, f64> = BTreeMap::new();

        for &seed in seeds {
            let seeded = seeded_config(cfg, seed);
            let output = run_experiment(&seeded, data)?;

            match skew_by_seed.get(&seed) {
                None => {
                    skew_by_seed.insert(seed, output.skew.clone());
                }
                Some(first) if *first != output.skew => {
                    return Err(Error::InconsistentArms(format!(
                        "seed {seed} produced diverging partitions"
                    )));
                }
                Some(_) => {}
            }

            let last = output
                .records
                .last()
                .expect("rounds >= 1 was validated above");
            per_seed_final.push(last.global_accuracy);
            per_seed_best.push(
                output
                    .records
                    .iter()
                    .map(|r| r.global_accuracy)
                    .fold(f64::NEG_INFINITY, f64::max),
            );
            for (&r, &acc) in &last.per_robot_accuracy {
                *robot_sums.entry(r).or_insert(0.0) += acc;
            }
            comm_totals.push(output.ledger.total_model_traffic() as f64);
        }

        let per_robot_mean = robot_sums
            .into_iter()
            .map(|(r, sum)| (r, sum / seeds.len() as f64))
            .collect();
        arms.push(ArmSummary {
            algorithm: cfg.algorithm,
            final_mean: mean(&per_seed_final),
            final_std: std_dev(&per_seed_final),
            best_mean: mean(&per_seed_best),
            best_std: std_dev(&per_seed_best),
            per_seed_final,
            per_seed_best,
            per_robot_mean,
            comm_total_mean: mean(&comm_totals),
        });
    }

    Ok(ComparisonTable {
        seeds: seeds.to_vec(),
        arms,
    })
}
