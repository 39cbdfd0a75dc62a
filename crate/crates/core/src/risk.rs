//! Value-at-risk, conditional value-at-risk and interval CVaR on finite
//! weighted loss distributions.
//!
//! All statistics are computed by integrating the step quantile function
//! exactly: an atom `v` occupying the cumulative-probability block
//! `(c_prev, c]` contributes `v * |(c_prev, c] ∩ (lo, hi]|` to the integral
//! over `(lo, hi]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum deviation of a weight sum from one that is silently renormalized.
pub const WEIGHT_RENORM_TOL: f64 = 1e-9;

/// Slack used when comparing a cumulative weight against a probability level.
const LEVEL_SLACK: f64 = 1e-12;

/// Validate positive weights and renormalize small drift in their sum.
pub(crate) fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::domain("empty weight vector"));
    }
    if let Some((i, w)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !(w.is_finite() && **w > 0.0))
    {
        return Err(Error::domain(format!("weight {i} is {w}, must be positive and finite")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_RENORM_TOL {
        return Err(Error::domain(format!("weights sum to {total}, expected 1")));
    }
    // leave sums that are 1 up to rounding alone so that normalizing is idempotent
    if (total - 1.0).abs() <= weights.len() as f64 * f64::EPSILON {
        return Ok(weights.to_vec());
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Which operands of `(1 - eps) * first + eps * second` carry nonzero mass.
pub(crate) fn mixture_parts(eps: f64) -> Result<(bool, bool)> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::domain(format!("mixture fraction {eps} outside [0, 1]")));
    }
    Ok((eps < 1.0, eps > 0.0))
}

/// A finite distribution of nonnegative losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedLossSample {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedLossSample {
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("empty loss sample"));
        }
        if values.len() != weights.len() {
            return Err(Error::contract(format!(
                "{} values but {} weights",
                values.len(),
                weights.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::domain(format!("loss value {i} is {v}, must be finite and >= 0")));
        }
        let weights = normalize_weights(&weights)?;
        Ok(Self { values, weights })
    }

    /// Equal mass `1/n` on each value.
    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::domain("empty loss sample"));
        }
        Self::new(values, vec![1.0 / n as f64; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    /// Total mass on values `<= t`.
    pub fn cdf(&self, t: f64) -> f64 {
        self.values
            .iter()
            .zip(&self.weights)
            .filter(|(v, _)| **v <= t)
            .map(|(_, w)| w)
            .sum::<f64>()
            .min(1.0)
    }

    /// Atoms sorted ascending by value (stable) with their right cumulative
    /// weight. The final cumulative weight is pinned to exactly one.
    pub fn sorted_blocks(&self) -> Vec<QuantileBlock> {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]));
        let mut cum = 0.0;
        let last = order.len() - 1;
        order
            .iter()
            .enumerate()
            .map(|(rank, &i)| {
                let lower = cum;
                cum += self.weights[i];
                let upper = if rank == last { 1.0 } else { cum };
                QuantileBlock {
                    value: self.values[i],
                    lower,
                    upper,
                    index: i,
                }
            })
            .collect()
    }

    /// `(1 - eps) * self + eps * other`, concatenating supports.
    pub fn mixture(&self, other: &Self, eps: f64) -> Result<Self> {
        let (keep0, keep1) = mixture_parts(eps)?;
        let mut values = Vec::with_capacity(self.len() + other.len());
        let mut weights = Vec::with_capacity(self.len() + other.len());
        if keep0 {
            values.extend_from_slice(&self.values);
            weights.extend(self.weights.iter().map(|w| w * (1.0 - eps)));
        }
        if keep1 {
            values.extend_from_slice(&other.values);
            weights.extend(other.weights.iter().map(|w| w * eps));
        }
        Self::new(values, weights)
    }
}

/// One atom of the step quantile function: it is the quantile for every
/// level in `(lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileBlock {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    /// Position of the atom in the unsorted sample.
    pub index: usize,
}

impl QuantileBlock {
    /// Length of `(lower, upper] ∩ (lo, hi]`.
    pub fn overlap(&self, lo: f64, hi: f64) -> f64 {
        (self.upper.min(hi) - self.lower.max(lo)).max(0.0)
    }
}

/// The interval `(alpha, beta]` of probability levels averaged by In-CVaR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLevels")]
pub struct TrimLevels {
    alpha: f64,
    beta: f64,
}

#[derive(Deserialize)]
struct RawLevels {
    alpha: f64,
    beta: f64,
}

impl TryFrom<RawLevels> for TrimLevels {
    type Error = Error;

    fn try_from(raw: RawLevels) -> Result<Self> {
        Self::new(raw.alpha, raw.beta)
    }
}

impl TrimLevels {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite() && 0.0 <= alpha && alpha < beta && beta <= 1.0) {
            return Err(Error::domain(format!(
                "trim levels must satisfy 0 <= alpha < beta <= 1, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    /// `(0, 1)`: plain expectation.
    pub fn expectation() -> Self {
        Self { alpha: 0.0, beta: 1.0 }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn width(&self) -> f64 {
        self.beta - self.alpha
    }
}

fn check_level(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::domain(format!("probability level {gamma} outside [0, 1]")));
    }
    Ok(())
}

/// `∫_lo^hi VaR_γ dγ` computed from the step quantile function.
pub fn integrate_quantile(blocks: &[QuantileBlock], lo: f64, hi: f64) -> f64 {
    blocks
        .iter()
        .filter(|b| b.upper > lo && b.lower < hi)
        .map(|b| b.value * b.overlap(lo, hi))
        .sum()
}

/// Smallest value whose cumulative weight reaches `gamma`. At `gamma = 0`
/// this is the minimum of the support.
pub fn var_at(sample: &WeightedLossSample, gamma: f64) -> Result<f64> {
    check_level(gamma)?;
    let blocks = sample.sorted_blocks();
    Ok(var_from_blocks(&blocks, gamma))
}

pub(crate) fn var_from_blocks(blocks: &[QuantileBlock], gamma: f64) -> f64 {
    blocks
        .iter()
        .find(|b| b.upper >= gamma - LEVEL_SLACK)
        .map_or(blocks[blocks.len() - 1].value, |b| b.value)
}

/// Average of `VaR` over `(gamma, 1]`.
pub fn cvar_at(sample: &WeightedLossSample, gamma: f64) -> Result<f64> {
    check_level(gamma)?;
    if gamma >= 1.0 {
        return Err(Error::domain("CVaR is undefined at level 1"));
    }
    let blocks = sample.sorted_blocks();
    Ok(integrate_quantile(&blocks, gamma, 1.0) / (1.0 - gamma))
}

/// Average of `VaR` over `(alpha, beta]`.
pub fn in_cvar(sample: &WeightedLossSample, levels: TrimLevels) -> f64 {
    let blocks = sample.sorted_blocks();
    integrate_quantile(&blocks, levels.alpha, levels.beta) / levels.width()
}

/// One side-by-side evaluation of a mixture bound.
#[derive(Debug, Clone, PartialEq)]
pub enum ClauseCheck {
    NotApplicable { reason: String },
    Evaluated {
        /// In-CVaR of the contaminated law.
        lhs: f64,
        /// The bound built from the nominal or contaminating law.
        rhs: f64,
        passed: bool,
    },
}

impl ClauseCheck {
    pub fn is_applicable(&self) -> bool {
        matches!(self, ClauseCheck::Evaluated { .. })
    }

    /// `true` when the clause does not apply or holds.
    pub fn ok(&self) -> bool {
        match self {
            ClauseCheck::NotApplicable { .. } => true,
            ClauseCheck::Evaluated { passed, .. } => *passed,
        }
    }
}

/// Extra data recorded for the VaR-threshold clause.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdDetail {
    /// Largest admissible mass of the contaminating law at or below the threshold.
    pub eta: f64,
    /// Level `(beta - eps * eta) / (1 - eps)` at which the nominal VaR is read.
    pub level: f64,
    /// When `level` sits within one atom of a jump of the nominal CDF, the
    /// values of the two atoms on either side of that jump.
    pub adjacent_atoms: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Report {
    /// Mixture In-CVaR is at most the nominal In-CVaR at rescaled levels.
    pub rescaled_levels: ClauseCheck,
    /// Mixture In-CVaR is at most a nominal VaR when the contamination is
    /// mostly small-loss.
    pub var_threshold: ClauseCheck,
    pub var_threshold_detail: Option<ThresholdDetail>,
    /// Mixture In-CVaR is at least a scaled lower-tail In-CVaR of the
    /// contaminating law.
    pub contamination_floor: ClauseCheck,
}

impl Lemma1Report {
    pub fn all_ok(&self) -> bool {
        self.rescaled_levels.ok() && self.var_threshold.ok() && self.contamination_floor.ok()
    }
}

/// Tolerance used by [`certify_lemma1`] for every inequality.
pub const LEMMA1_TOL: f64 = 1e-9;

fn upper_bound_check(lhs: f64, rhs: f64) -> ClauseCheck {
    ClauseCheck::Evaluated {
        lhs,
        rhs,
        passed: lhs <= rhs + LEMMA1_TOL * (1.0 + rhs.abs()),
    }
}

/// Evaluate both sides of the three mixture bounds for the contaminated law
/// `(1 - eps) * nominal + eps * contamination`.
///
/// Clauses whose regime does not contain `eps` are reported as not applicable.
pub fn certify_lemma1(
    nominal: &WeightedLossSample,
    contamination: &WeightedLossSample,
    eps: f64,
    levels: TrimLevels,
) -> Result<Lemma1Report> {
    let mixed = nominal.mixture(contamination, eps)?;
    let lhs = in_cvar(&mixed, levels);
    let (alpha, beta) = (levels.alpha, levels.beta);
    let nominal_blocks = nominal.sorted_blocks();

    let rescaled_levels = if eps <= 1.0 - beta {
        let scale = 1.0 - eps;
        let shifted = TrimLevels::new(alpha / scale, (beta / scale).min(1.0))?;
        upper_bound_check(lhs, in_cvar(nominal, shifted))
    } else {
        ClauseCheck::NotApplicable {
            reason: format!("eps = {eps} exceeds 1 - beta = {}", 1.0 - beta),
        }
    };

    let (var_threshold, var_threshold_detail) = if eps > 0.0 && eps <= beta && eps < 1.0 {
        let level_for = |eta: f64| ((beta - eps * eta) / (1.0 - eps)).clamp(0.0, 1.0);
        let admissible = |eta: f64| {
            let threshold = var_from_blocks(&nominal_blocks, level_for(eta));
            contamination.cdf(threshold) >= eta - LEVEL_SLACK
        };
        let eta_min = ((eps + beta - 1.0) / eps).max(0.0);
        if !admissible(eta_min) {
            (
                ClauseCheck::NotApplicable {
                    reason: "no admissible eta: contamination mass below the VaR threshold is too small"
                        .into(),
                },
                None,
            )
        } else {
            // admissible(eta) is monotone: the threshold falls as eta grows
            // while the requirement rises. Bisect for the largest valid eta.
            let eta = if admissible(1.0) {
                1.0
            } else {
                let (mut lo, mut hi) = (eta_min, 1.0);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if admissible(mid) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            };
            let level = level_for(eta);
            let rhs = var_from_blocks(&nominal_blocks, level);
            let adjacent_atoms = nominal_blocks
                .windows(2)
                .find(|w| (w[0].upper - level).abs() < 1e-9)
                .map(|w| (w[0].value, w[1].value));
            (
                upper_bound_check(lhs, rhs),
                Some(ThresholdDetail {
                    eta,
                    level,
                    adjacent_atoms,
                }),
            )
        }
    } else {
        (
            ClauseCheck::NotApplicable {
                reason: format!("eps = {eps} outside (0, beta] or equal to 1"),
            },
            None,
        )
    };

    let contamination_floor = if eps > 1.0 - beta && eps <= 1.0 - alpha {
        let upper = ((beta + eps - 1.0) / eps).min(1.0);
        let tail = in_cvar(contamination, TrimLevels::new(0.0, upper)?);
        let rhs = (beta + eps - 1.0) / (beta - alpha) * tail;
        ClauseCheck::Evaluated {
            lhs,
            rhs,
            passed: lhs + LEMMA1_TOL * (1.0 + rhs.abs()) >= rhs,
        }
    } else {
        ClauseCheck::NotApplicable {
            reason: format!("eps = {eps} outside (1 - beta, 1 - alpha]"),
        }
    };

    Ok(Lemma1Report {
        rescaled_levels,
        var_threshold,
        var_threshold_detail,
        contamination_floor,
    })
}
