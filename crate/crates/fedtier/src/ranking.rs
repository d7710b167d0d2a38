//! Per-robot data-quality scoring and tier selection.
//!
//! Each robot is scored on two axes computed from its local shard alone:
//!
//! - DDS (distribution score): sum of per-class counts divided by the
//!   largest per-class count. Ranges from just above 0 (one class dominates)
//!   to `m` (perfectly balanced over `m` classes). An empty robot scores 0
//!   by convention — it carries no quality signal and must rank last.
//! - DQS (quantity score): the robot's total sample count divided by the
//!   fleet-wide maximum, so the best-stocked robot scores exactly 1.
//!
//! The importance score is the weighted sum `IS = λ_dds·DDS + λ_dqs·DQS`.
//! The `j` highest-IS robots become the top tier; every other robot is
//! attached to exactly one top robot's low-level set, and each top robot
//! belongs to its own set.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::data::ClientDataset;
use crate::error::{Error, Result};

/// All scores for one robot. `hcs` is the highest per-class count on the
/// robot; `hrs_ref` is the fleet-wide highest total that DQS normalizes by.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingScores {
    pub robot_id: u64,
    pub hcs: u64,
    pub dds: f64,
    pub hrs_ref: u64,
    pub dqs: f64,
    pub is_score: f64,
}

/// How non-top robots map to top robots.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum AssignmentPolicy {
    /// Deal remaining robots to top robots cyclically, in descending IS
    /// order, so set sizes differ by at most one.
    #[default]
    BalancedRoundRobin,
    /// Explicit map from each non-top robot id to its top robot id.
    Manual(BTreeMap<u64, u64>),
}

/// The two-tier fleet layout: ordered top robots plus one low-level set per
/// top robot. The sets partition the whole fleet and each contains its own
/// top robot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TierAssignment {
    /// Top robots in rank order (highest IS first).
    pub top: Vec<u64>,
    /// Top robot id → ascending ids of the robots it serves (itself included).
    pub low_sets: BTreeMap<u64, Vec<u64>>,
}

impl TierAssignment {
    /// The top robot whose set contains `robot_id`, if any.
    pub fn tier_of(&self, robot_id: u64) -> Option<u64> {
        self.low_sets
            .iter()
            .find(|(_, members)| members.contains(&robot_id))
            .map(|(&t, _)| t)
    }

    /// Total robots covered by the low-level sets.
    pub fn fleet_size(&self) -> usize {
        self.low_sets.values().map(Vec::len).sum()
    }
}

/// Highest per-class count and the distribution score derived from it.
/// A robot with no samples at all scores `(0, 0.0)`.
pub fn compute_dds(class_counts: &[u64]) -> (u64, f64) {
    let hcs = class_counts.iter().copied().max().unwrap_or(0);
    if hcs == 0 {
        return (0, 0.0);
    }
    let total: u64 = class_counts.iter().sum();
    (hcs, total as f64 / hcs as f64)
}

/// Quantity scores for the whole fleet. Errors when no robot holds any
/// data, since the normalizing maximum would be zero.
pub fn compute_dqs(totals: &[u64]) -> Result<Vec<f64>> {
    if totals.is_empty() {
        return Err(Error::InvalidPlan("no robots to rank".into()));
    }
    let hrs = *totals.iter().max().expect("nonempty");
    if hrs == 0 {
        return Err(Error::AllRobotsEmpty);
    }
    Ok(totals.iter().map(|&t| t as f64 / hrs as f64).collect())
}

fn validate_lambdas(lambda_dds: f64, lambda_dqs: f64) -> Result<()> {
    if !(lambda_dds.is_finite() && lambda_dqs.is_finite())
        || lambda_dds < 0.0
        || lambda_dqs < 0.0
    {
        return Err(Error::InvalidHyperparams(format!(
            "lambda weights must be finite and nonnegative, got {lambda_dds}/{lambda_dqs}"
        )));
    }
    if lambda_dds + lambda_dqs <= 0.0 {
        return Err(Error::InvalidHyperparams(
            "lambda weights must not both be zero".into(),
        ));
    }
    Ok(())
}

/// Weighted importance scores from per-robot `(dds, dqs)` pairs.
pub fn compute_is(scores: &[(f64, f64)], lambda_dds: f64, lambda_dqs: f64) -> Result<Vec<f64>> {
    validate_lambdas(lambda_dds, lambda_dqs)?;
    Ok(scores
        .iter()
        .map(|&(dds, dqs)| lambda_dds * dds + lambda_dqs * dqs)
        .collect())
}

/// Scores every robot in one pass: DDS from its class counts, DQS against
/// the fleet maximum, and the combined importance score.
pub fn rank_robots(
    parts: &[ClientDataset],
    lambda_dds: f64,
    lambda_dqs: f64,
) -> Result<Vec<RankingScores>> {
    validate_lambdas(lambda_dds, lambda_dqs)?;
    if parts.is_empty() {
        return Err(Error::InvalidPlan("no robots to rank".into()));
    }
    let totals: Vec<u64> = parts.iter().map(ClientDataset::total).collect();
    let dqs = compute_dqs(&totals)?;
    let hrs = *totals.iter().max().expect("nonempty");
    Ok(parts
        .iter()
        .zip(dqs)
        .map(|(part, dqs)| {
            let (hcs, dds) = compute_dds(part.class_counts());
            RankingScores {
                robot_id: part.robot_id,
                hcs,
                dds,
                hrs_ref: hrs,
                dqs,
                is_score: lambda_dds * dds + lambda_dqs * dqs,
            }
        })
        .collect())
}

/// Selects the `j` highest-IS robots as the top tier (ties broken toward
/// the lower robot id) and attaches every remaining robot to a top robot
/// per `policy`. The returned sets are an exact partition of the fleet.
pub fn select_tiers(
    scores: &[RankingScores],
    j: usize,
    policy: &AssignmentPolicy,
) -> Result<TierAssignment> {
    let n = scores.len();
    if j == 0 {
        return Err(Error::InvalidPlan("top_count must be at least 1".into()));
    }
    if j > n {
        return Err(Error::TopCountExceedsFleet { j, n });
    }
    let ids: Vec<u64> = scores.iter().map(|s| s.robot_id).collect();
    {
        let mut dedup = ids.clone();
        dedup.sort_unstable();
        dedup.dedup();
        if dedup.len() != n {
            return Err(Error::InvalidPlan("duplicate robot id in scores".into()));
        }
    }

    // rank by descending IS, then ascending id for determinism on ties
    let mut order: Vec<&RankingScores> = scores.iter().collect();
    order.sort_by(|a, b| {
        b.is_score
            .total_cmp(&a.is_score)
            .then_with(|| a.robot_id.cmp(&b.robot_id))
    });
    let top: Vec<u64> = order[..j].iter().map(|s| s.robot_id).collect();
    let mut low_sets: BTreeMap<u64, Vec<u64>> =
        top.iter().map(|&t| (t, vec![t])).collect();

    match policy {
        AssignmentPolicy::BalancedRoundRobin => {
            for (i, robot) in order[j..].iter().enumerate() {
                low_sets
                    .get_mut(&top[i % j])
                    .expect("top id present")
                    .push(robot.robot_id);
            }
        }
        AssignmentPolicy::Manual(map) => {
            for (&robot, &target) in map {
                if top.contains(&robot) {
                    return Err(Error::InvalidAssignment(format!(
                        "robot {robot} is a top robot and cannot be reassigned"
                    )));
                }
                if !ids.contains(&robot) {
                    return Err(Error::InvalidAssignment(format!(
                        "robot {robot} is not in the fleet"
                    )));
                }
                if !top.contains(&target) {
                    return Err(Error::InvalidAssignment(format!(
                        "robot {robot} assigned to {target}, which is not a top robot"
                    )));
                }
            }
            for robot in order[j..].iter().map(|s| s.robot_id) {
                let target = map.get(&robot).ok_or_else(|| {
                    Error::InvalidAssignment(format!(
                        "robot {robot} has no low-level assignment"
                    ))
                })?;
                low_sets
                    .get_mut(target)
                    .expect("validated above")
                    .push(robot);
            }
        }
    }

    for members in low_sets.values_mut() {
        members.sort_unstable();
    }
    let assignment = TierAssignment { top, low_sets };
    debug_assert_eq!(assignment.fleet_size(), n);
    Ok(assignment)
}

#[derive(Serialize)]
struct ReportRow {
    robot_id: u64,
    hcs: u64,
    dds: f64,
    dqs: f64,
    is_score: f64,
    tier: u64,
}

/// Renders scores plus tier membership as one JSON object per line, in the
/// order the scores were given.
pub fn ranking_report_jsonl(
    scores: &[RankingScores],
    assignment: &TierAssignment,
) -> Result<String> {
    let mut out = String::new();
    for s in scores {
        let tier = assignment.tier_of(s.robot_id).ok_or_else(|| {
            Error::InvalidAssignment(format!("robot {} belongs to no tier", s.robot_id))
        })?;
        let row = ReportRow {
            robot_id: s.robot_id,
            hcs: s.hcs,
            dds: s.dds,
            dqs: s.dqs,
            is_score: s.is_score,
            tier,
        };
        out.push_str(&serde_json::to_string(&row).expect("plain struct serializes"));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LabeledSample;
    use crate::rng::SplitMix64;

    const TOL: f64 = 1e-12;

    fn scores_from(is_scores: &[f64]) -> Vec<RankingScores> {
        is_scores
            .iter()
            .enumerate()
            .map(|(i, &is_score)| RankingScores {
                robot_id: i as u64,
                hcs: 1,
                dds: 0.0,
                hrs_ref: 1,
                dqs: 0.0,
                is_score,
            })
            .collect()
    }

    fn client(robot_id: u64, class_counts: &[u64]) -> ClientDataset {
        let mut samples = Vec::new();
        for (c, &count) in class_counts.iter().enumerate() {
            for _ in 0..count {
                samples.push(LabeledSample::new(vec![0.0], c));
            }
        }
        ClientDataset::new(robot_id, samples, class_counts.len()).unwrap()
    }

    #[test]
    fn dds_hand_profiles() {
        // (3, 100, 2): heavily imbalanced — barely above the 1.0 floor
        let (hcs, dds_imbalanced) = compute_dds(&[3, 100, 2]);
        assert_eq!(hcs, 100);
        assert!((dds_imbalanced - 1.05).abs() < TOL, "dds {dds_imbalanced}");

        // (52, 76, 88): well balanced — close to the m = 3 ceiling
        let (hcs, dds_balanced) = compute_dds(&[52, 76, 88]);
        assert_eq!(hcs, 88);
        assert!((dds_balanced - 216.0 / 88.0).abs() < TOL, "dds {dds_balanced}");

        // the balanced profile must outrank the imbalanced one
        assert!(dds_balanced > dds_imbalanced + TOL);
    }

    #[test]
    fn dds_equal_counts_hit_class_count_ceiling() {
        for m in 1..6 {
            let counts = vec![17u64; m];
            let (_, dds) = compute_dds(&counts);
            assert!((dds - m as f64).abs() < TOL);
        }
    }

    #[test]
    fn dds_empty_robot_scores_zero() {
        assert_eq!(compute_dds(&[0, 0, 0]), (0, 0.0));
        assert_eq!(compute_dds(&[]), (0, 0.0));
    }

    #[test]
    fn dqs_normalizes_by_fleet_maximum() {
        let dqs = compute_dqs(&[105, 216]).unwrap();
        assert!((dqs[0] - 105.0 / 216.0).abs() < TOL);
        assert!((dqs[1] - 1.0).abs() < TOL);

        let equal = compute_dqs(&[40, 40, 40]).unwrap();
        assert!(equal.iter().all(|&d| (d - 1.0).abs() < TOL));

        let with_empty = compute_dqs(&[0, 10]).unwrap();
        assert_eq!(with_empty[0], 0.0);
    }

    #[test]
    fn dqs_rejects_a_dataless_fleet() {
        assert!(matches!(compute_dqs(&[0, 0]), Err(Error::AllRobotsEmpty)));
        assert!(compute_dqs(&[]).is_err());
    }

    #[test]
    fn is_hand_value_and_weight_rules() {
        let pairs = [(1.05, 105.0 / 216.0)];
        let is = compute_is(&pairs, 0.5, 0.5).unwrap();
        let expected = 0.5 * 1.05 + 0.5 * (105.0 / 216.0); // ≈ 0.768
        assert!((is[0] - expected).abs() < TOL);
        assert!((is[0] - 0.768).abs() < 1e-3);

        // dqs weight zero → ranking by dds alone
        let pairs = [(2.0, 0.1), (1.0, 0.9)];
        let is = compute_is(&pairs, 1.0, 0.0).unwrap();
        assert!(is[0] > is[1]);

        assert!(compute_is(&pairs, 0.0, 0.0).is_err());
        assert!(compute_is(&pairs, -0.1, 0.5).is_err());
        assert!(compute_is(&pairs, f64::NAN, 0.5).is_err());
    }

    #[test]
    fn scaling_both_lambdas_preserves_order() {
        let mut rng = SplitMix64::new(42);
        for _ in 0..50 {
            let pairs: Vec<(f64, f64)> = (0..6)
                .map(|_| (rng.uniform(0.0, 3.0), rng.next_f64()))
                .collect();
            let base = compute_is(&pairs, 0.5, 0.5).unwrap();
            let scaled = compute_is(&pairs, 2.0, 2.0).unwrap();
            let order = |v: &[f64]| {
                let mut idx: Vec<usize> = (0..v.len()).collect();
                idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
                idx
            };
            assert_eq!(order(&base), order(&scaled));
        }
    }

    #[test]
    fn scaling_class_counts_preserves_ranking() {
        let mut rng = SplitMix64::new(43);
        for _ in 0..30 {
            let fleet: Vec<ClientDataset> = (0..5)
                .map(|r| {
                    let counts: Vec<u64> = (0..3).map(|_| 1 + rng.below(20) as u64).collect();
                    client(r, &counts)
                })
                .collect();
            let scaled_fleet: Vec<ClientDataset> = fleet
                .iter()
                .map(|p| {
                    let counts: Vec<u64> = p.class_counts().iter().map(|&c| c * 5).collect();
                    client(p.robot_id, &counts)
                })
                .collect();
            let a = rank_robots(&fleet, 0.5, 0.5).unwrap();
            let b = rank_robots(&scaled_fleet, 0.5, 0.5).unwrap();
            let order = |scores: &[RankingScores]| {
                let mut idx: Vec<u64> = scores.iter().map(|s| s.robot_id).collect();
                idx.sort_by(|&x, &y| {
                    let sx = &scores[x as usize];
                    let sy = &scores[y as usize];
                    sy.is_score.total_cmp(&sx.is_score).then(x.cmp(&y))
                });
                idx
            };
            assert_eq!(order(&a), order(&b));
        }
    }

    #[test]
    fn rank_robots_scores_an_empty_robot_last() {
        let fleet = vec![client(0, &[0, 0]), client(1, &[5, 5]), client(2, &[9, 1])];
        let scores = rank_robots(&fleet, 0.5, 0.5).unwrap();
        assert_eq!(scores[0].is_score, 0.0);
        assert_eq!(scores[0].hcs, 0);
        assert!(scores[1].is_score > scores[2].is_score); // balanced beats skewed
        assert_eq!(scores[1].hrs_ref, 10);
        assert!((scores[1].dds - 2.0).abs() < TOL);
        assert!((scores[1].dqs - 1.0).abs() < TOL);
    }

    #[test]
    fn select_tiers_degenerate_all_top() {
        let scores = scores_from(&[0.3, 0.9, 0.5]);
        let tiers = select_tiers(&scores, 3, &AssignmentPolicy::BalancedRoundRobin).unwrap();
        assert_eq!(tiers.top, vec![1, 2, 0]); // rank order
        for (&t, members) in &tiers.low_sets {
            assert_eq!(members, &vec![t]);
        }
    }

    #[test]
    fn select_tiers_breaks_ties_toward_lower_id() {
        let scores = scores_from(&[0.9, 0.9, 0.1]);
        let tiers = select_tiers(&scores, 1, &AssignmentPolicy::BalancedRoundRobin).unwrap();
        assert_eq!(tiers.top, vec![0]);
        assert_eq!(tiers.low_sets[&0], vec![0, 1, 2]);
    }

    #[test]
    fn select_tiers_balanced_sizes_for_seven_robots() {
        let scores = scores_from(&[0.1, 0.9, 0.2, 0.8, 0.3, 0.7, 0.4]);
        let tiers = select_tiers(&scores, 2, &AssignmentPolicy::BalancedRoundRobin).unwrap();
        assert_eq!(tiers.top, vec![1, 3]);
        let mut sizes: Vec<usize> = tiers.low_sets.values().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 4]);
        assert_eq!(tiers.fleet_size(), 7);
        // every top robot serves itself
        for &t in &tiers.top {
            assert!(tiers.low_sets[&t].contains(&t));
        }
        // highest-IS remaining robot (id 5) lands with the top-ranked robot
        assert!(tiers.low_sets[&1].contains(&5));
    }

    #[test]
    fn select_tiers_is_an_exact_partition() {
        let mut rng = SplitMix64::new(44);
        for _ in 0..40 {
            let n = 2 + rng.below(9);
            let j = 1 + rng.below(n);
            let is_scores: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
            let tiers =
                select_tiers(&scores_from(&is_scores), j, &AssignmentPolicy::BalancedRoundRobin)
                    .unwrap();
            let mut all: Vec<u64> = tiers.low_sets.values().flatten().copied().collect();
            all.sort_unstable();
            let expected: Vec<u64> = (0..n as u64).collect();
            assert_eq!(all, expected, "n={n} j={j}");
            for &t in &tiers.top {
                assert_eq!(tiers.tier_of(t), Some(t));
            }
        }
    }

    #[test]
    fn select_tiers_validates_inputs() {
        let scores = scores_from(&[0.5, 0.4]);
        assert!(select_tiers(&scores, 0, &AssignmentPolicy::BalancedRoundRobin).is_err());
        assert!(matches!(
            select_tiers(&scores, 3, &AssignmentPolicy::BalancedRoundRobin),
            Err(Error::TopCountExceedsFleet { j: 3, n: 2 })
        ));
        let mut dup = scores_from(&[0.5, 0.4]);
        dup[1].robot_id = 0;
        assert!(select_tiers(&dup, 1, &AssignmentPolicy::BalancedRoundRobin).is_err());
    }

    #[test]
    fn manual_assignment_policy() {
        let scores = scores_from(&[0.9, 0.8, 0.1, 0.2]);
        let map: BTreeMap<u64, u64> = [(2, 0), (3, 0)].into();
        let tiers = select_tiers(&scores, 2, &AssignmentPolicy::Manual(map)).unwrap();
        assert_eq!(tiers.low_sets[&0], vec![0, 2, 3]);
        assert_eq!(tiers.low_sets[&1], vec![1]);

        // missing robot
        let partial: BTreeMap<u64, u64> = [(2, 0)].into();
        assert!(matches!(
            select_tiers(&scores, 2, &AssignmentPolicy::Manual(partial)),
            Err(Error::InvalidAssignment(_))
        ));
        // target is not a top robot
        let bad_target: BTreeMap<u64, u64> = [(2, 3), (3, 0)].into();
        assert!(select_tiers(&scores, 2, &AssignmentPolicy::Manual(bad_target)).is_err());
        // reassigning a top robot
        let top_key: BTreeMap<u64, u64> = [(1, 0), (2, 0), (3, 0)].into();
        assert!(select_tiers(&scores, 2, &AssignmentPolicy::Manual(top_key)).is_err());
    }

    #[test]
    fn report_emits_one_json_line_per_robot() {
        let fleet = vec![client(0, &[3, 100, 2]), client(1, &[52, 76, 88])];
        let scores = rank_robots(&fleet, 0.5, 0.5).unwrap();
        let tiers = select_tiers(&scores, 1, &AssignmentPolicy::BalancedRoundRobin).unwrap();
        let report = ranking_report_jsonl(&scores, &tiers).unwrap();
        let lines: Vec<&str> = report.lines().collect();
        assert_eq!(lines.len(), 2);
        let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first["robot_id"], 0);
        assert_eq!(first["hcs"], 100);
        assert_eq!(first["tier"], 1); // robot 1 outranks robot 0
        let second: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(second["tier"], 1);
    }
}
