//! Weighted model aggregation: flat sample-weighted averaging, the two-step
//! tiered variant, and normalized averaging for heterogeneous local step
//! counts.
//!
//! All entry points funnel through one weighted-mean kernel so the tiered
//! path and the flat path share identical floating-point behaviour:
//! weights are normalized first, then each coordinate is reduced with
//! pairwise summation to bound rounding drift on wide models. A batch with
//! a single positive-weight entry returns that entry's parameters verbatim
//! (no arithmetic), which keeps singleton tiers and degenerate weights
//! exact.
//!
//! Zero-weight entries (empty robots) are legal everywhere: they cannot
//! shift the aggregate but keep fleet bookkeeping uniform.

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// One robot's trained model plus its aggregation weight (its sample count,
/// or a tier total) and the local step count used by normalized averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedModel {
    pub params: ModelParams,
    pub weight: f64,
    /// Mini-batch steps behind `params`; only [`fednova`] reads this.
    pub steps: u64,
}

impl WeightedModel {
    pub fn new(params: ModelParams, weight: f64) -> Self {
        Self {
            params,
            weight,
            steps: 1,
        }
    }

    pub fn with_steps(mut self, steps: u64) -> Self {
        self.steps = steps;
        self
    }
}

/// Sums `values` by recursive halving; error grows O(log n) instead of O(n).
fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => pairwise_sum(&values[..n / 2]) + pairwise_sum(&values[n / 2..]),
    }
}

fn check_weight(weight: f64) -> Result<()> {
    if !weight.is_finite() || weight < 0.0 {
        return Err(Error::InvalidWeight(weight));
    }
    Ok(())
}

/// Convex combination of `entries` by their weights. The shared kernel
/// behind every averaging entry point.
fn weighted_mean(entries: &[(&ModelParams, f64)]) -> Result<ModelParams> {
    if entries.is_empty() {
        return Err(Error::EmptyAggregation);
    }
    for &(_, w) in entries {
        check_weight(w)?;
    }
    let dim = entries[0].0.dim();
    for &(params, _) in entries {
        if params.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: params.dim(),
            });
        }
    }
    let active: Vec<(&ModelParams, f64)> = entries
        .iter()
        .copied()
        .filter(|&(_, w)| w > 0.0)
        .collect();
    let total: f64 = active.iter().map(|&(_, w)| w).sum();
    if total <= 0.0 {
        return Err(Error::ZeroTotalWeight);
    }
    // exactness matters downstream: a lone participant passes through
    // untouched instead of being multiplied by weight/weight
    if active.len() == 1 {
        return Ok(active[0].0.clone());
    }
    let shares: Vec<f64> = active.iter().map(|&(_, w)| w / total).collect();
    let mut out = Vec::with_capacity(dim);
    let mut terms = vec![0.0; active.len()];
    for k in 0..dim {
        for (term, (&(params, _), &share)) in
            terms.iter_mut().zip(active.iter().zip(&shares))
        {
            *term = share * params.values()[k];
        }
        out.push(pairwise_sum(&terms));
    }
    ModelParams::new(out)
}

/// Sample-weighted average of all robot models: the single-tier baseline
/// aggregation rule.
pub fn fedavg(models: &[WeightedModel]) -> Result<ModelParams> {
    let entries: Vec<(&ModelParams, f64)> =
        models.iter().map(|m| (&m.params, m.weight)).collect();
    weighted_mean(&entries)
}

/// First aggregation step of the tiered protocol: average one low-level
/// set's models, weighted by raw sample counts within the set. A singleton
/// set returns its model unchanged.
pub fn aggregate_tier(models: &[WeightedModel]) -> Result<ModelParams> {
    fedavg(models)
}

/// Second aggregation step: average the per-tier models, each weighted by
/// the total sample count its low-level set holds.
pub fn aggregate_server(tier_models: &[(ModelParams, u64)]) -> Result<ModelParams> {
    let entries: Vec<(&ModelParams, f64)> = tier_models
        .iter()
        .map(|(params, total)| (params, *total as f64))
        .collect();
    weighted_mean(&entries)
}

/// Normalized averaging for heterogeneous local work. Robots that ran
/// different step counts contribute *normalized* update directions:
///
/// ```text
/// d_r   = (w_prev − w_r) / τ_r
/// τ_eff = Σ p_r τ_r          p_r = weight_r / Σ weights
/// w_next = w_prev − τ_eff · Σ p_r d_r
/// ```
///
/// With equal `τ_r` this reduces algebraically to [`fedavg`]. Zero-weight
/// robots are skipped; a participating robot with `steps = 0` is an error.
pub fn fednova(global_prev: &ModelParams, models: &[WeightedModel]) -> Result<ModelParams> {
    if models.is_empty() {
        return Err(Error::EmptyAggregation);
    }
    let dim = global_prev.dim();
    for m in models {
        check_weight(m.weight)?;
        if m.params.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: m.params.dim(),
            });
        }
    }
    let active: Vec<&WeightedModel> = models.iter().filter(|m| m.weight > 0.0).collect();
    let total: f64 = active.iter().map(|m| m.weight).sum();
    if total <= 0.0 {
        return Err(Error::ZeroTotalWeight);
    }
    for m in &active {
        if m.steps == 0 {
            return Err(Error::ZeroSteps { weight: m.weight });
        }
    }
    if active.len() == 1 {
        return Ok(active[0].params.clone());
    }
    let shares: Vec<f64> = active.iter().map(|m| m.weight / total).collect();
    let tau_eff: f64 = shares
        .iter()
        .zip(&active)
        .map(|(p, m)| p * m.steps as f64)
        .sum();
    let g = global_prev.values();
    let mut out = Vec::with_capacity(dim);
    let mut terms = vec![0.0; active.len()];
    for (k, &gk) in g.iter().enumerate() {
        for (term, (m, &p)) in terms.iter_mut().zip(active.iter().zip(&shares)) {
            *term = p * (gk - m.params.values()[k]) / m.steps as f64;
        }
        out.push(gk - tau_eff * pairwise_sum(&terms));
    }
    ModelParams::new(out)
}
