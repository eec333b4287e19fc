//! Input distributions, the small/large split and the instance assumptions.
//!
//! Everything downstream works on a [`TokenDistribution`] whose probabilities
//! are sorted non-increasing. The permutation back to the caller's token ids is
//! kept alongside so that results can be reported in the original labelling.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TppError};

/// Tolerance on `|Σp - 1|` for an input to count as normalized.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// A categorical distribution sorted by non-increasing probability.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenDistribution {
    probs: Vec<f64>,
    token_ids: Vec<usize>,
    dropped: Vec<usize>,
}

/// On-disk form of a distribution: `{"probs": [...], "normalize": true}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistributionFile {
    pub probs: Vec<f64>,
    #[serde(default)]
    pub normalize: bool,
}

impl DistributionFile {
    pub fn load(&self) -> Result<TokenDistribution> {
        load_distribution(&self.probs, self.normalize)
    }
}

/// Validates, optionally normalizes and sorts a raw probability vector.
///
/// Zero entries are dropped and their original indices recorded in
/// [`TokenDistribution::dropped`]. With `normalize` set, the vector is only
/// rescaled when its sum is off by more than [`NORMALIZATION_TOLERANCE`], so
/// loading an already loaded distribution reproduces it bit for bit.
pub fn load_distribution(raw: &[f64], normalize: bool) -> Result<TokenDistribution> {
    if raw.is_empty() {
        return Err(TppError::EmptyDistribution);
    }
    for (index, &value) in raw.iter().enumerate() {
        if !value.is_finite() {
            return Err(TppError::NonFiniteProbability { index });
        }
        if value < 0.0 {
            return Err(TppError::NegativeProbability { index, value });
        }
    }
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 {
        return Err(TppError::ZeroMass);
    }
    let scale = if (sum - 1.0).abs() <= NORMALIZATION_TOLERANCE {
        1.0
    } else if normalize {
        sum
    } else {
        return Err(TppError::Unnormalized { sum });
    };

    let mut order: Vec<usize> = (0..raw.len()).collect();
    // stable: equal probabilities keep their input order
    order.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]));

    let mut probs = Vec::with_capacity(raw.len());
    let mut token_ids = Vec::with_capacity(raw.len());
    let mut dropped = Vec::new();
    for id in order {
        if raw[id] == 0.0 {
            dropped.push(id);
        } else {
            probs.push(raw[id] / scale);
            token_ids.push(id);
        }
    }
    dropped.sort_unstable();

    Ok(TokenDistribution {
        probs,
        token_ids,
        dropped,
    })
}

impl TokenDistribution {
    /// Sorted probabilities, `p[0] >= p[1] >= ...`.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Original index of each sorted entry.
    pub fn token_ids(&self) -> &[usize] {
        &self.token_ids
    }

    /// Original indices of zero-probability inputs removed at load time.
    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    /// Support size (zero entries excluded).
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.probs[index]
    }

    pub fn mass_of(&self, indices: &[usize]) -> f64 {
        indices.iter().map(|&i| self.probs[i]).sum()
    }

    /// Maps original token ids back to sorted positions.
    pub fn rank_of_token(&self) -> std::collections::HashMap<usize, usize> {
        self.token_ids
            .iter()
            .enumerate()
            .map(|(rank, &id)| (id, rank))
            .collect()
    }
}

/// The small/large split at threshold `theta`.
#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub theta: f64,
    /// Sorted positions with `p <= theta`, in increasing position order.
    pub small_indices: Vec<usize>,
    pub large_indices: Vec<usize>,
}

impl Classification {
    pub fn small_count(&self) -> usize {
        self.small_indices.len()
    }
}

fn check_rate_and_epsilon(rate_floor: f64, epsilon: f64) -> Result<()> {
    if !(rate_floor.is_finite() && rate_floor > 0.0) {
        return Err(TppError::InvalidParameter(format!(
            "rate floor must be positive, got {rate_floor}"
        )));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(TppError::InvalidParameter(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    Ok(())
}

/// `⌈x⌉` with a little slack so that `1.5 / 0.25` style quotients that land a
/// hair above an integer do not round up an extra step.
fn ceil_tolerant(x: f64) -> f64 {
    (x - 1e-9).ceil()
}

/// Exponent `k = ⌈R/ε⌉` of the repair subtree size `T_L = 2^k`.
pub fn subtree_log2(rate_floor: f64, epsilon: f64) -> Result<u32> {
    check_rate_and_epsilon(rate_floor, epsilon)?;
    let k = ceil_tolerant(rate_floor / epsilon).max(1.0);
    if k > 62.0 {
        return Err(TppError::InvalidParameter(format!(
            "rate floor {rate_floor} is too large for epsilon {epsilon}: repair subtree would need 2^{k} leaves"
        )));
    }
    Ok(k as u32)
}

/// Truncation depth `d = ⌈log₂(1/ε)⌉`, i.e. the least `d` with `2^-d <= ε`.
pub fn truncation_depth(epsilon: f64) -> Result<u32> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(TppError::InvalidParameter(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    let mut d = 1u32;
    while 2f64.powi(-(d as i32)) > epsilon {
        d += 1;
    }
    Ok(d)
}

/// Small/large threshold `θ = ε·2^{-⌈R/ε⌉} = ε / T_L`.
pub fn small_threshold(rate_floor: f64, epsilon: f64) -> Result<f64> {
    let k = subtree_log2(rate_floor, epsilon)?;
    Ok(epsilon * 2f64.powi(-(k as i32)))
}

/// Splits the support at [`small_threshold`].
pub fn classify(dist: &TokenDistribution, rate_floor: f64, epsilon: f64) -> Result<Classification> {
    let theta = small_threshold(rate_floor, epsilon)?;
    let (small_indices, large_indices) = (0..dist.len()).partition(|&i| dist.prob(i) <= theta);
    Ok(Classification {
        theta,
        small_indices,
        large_indices,
    })
}

/// A validated solver input.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub dist: TokenDistribution,
    pub rate_floor: f64,
    pub epsilon: f64,
    /// Truncation depth `d`.
    pub depth: u32,
    /// `log₂ T_L`.
    pub subtree_log2: u32,
    pub classification: Classification,
}

impl ProblemInstance {
    pub fn new(dist: TokenDistribution, rate_floor: f64, epsilon: f64) -> Result<Self> {
        check_rate_and_epsilon(rate_floor, epsilon)?;
        let depth = truncation_depth(epsilon)?;
        let subtree_log2 = subtree_log2(rate_floor, epsilon)?;
        let classification = classify(&dist, rate_floor, epsilon)?;
        Ok(ProblemInstance {
            dist,
            rate_floor,
            epsilon,
            depth,
            subtree_log2,
            classification,
        })
    }

    /// `T_L`, the leaf count of the repair subtree.
    pub fn subtree_leaves(&self) -> u64 {
        1u64 << self.subtree_log2
    }

    pub fn n(&self) -> usize {
        self.dist.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub id: u8,
    pub passed: bool,
    pub detail: String,
}

/// Pass/fail status of the three instance assumptions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| !c.passed)
    }

    pub fn passed(&self, id: u8) -> bool {
        self.checks.iter().any(|c| c.id == id && c.passed)
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, check) in self.checks.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            let status = if check.passed { "ok" } else { "FAILED" };
            write!(f, "[{}] {} {}", check.id, status, check.detail)?;
        }
        Ok(())
    }
}

/// Checks `n >= 2^R`, `|small| >= T_L + ⌈1/ε⌉` and `T_L >= ⌈1/ε⌉`.
pub fn check_assumptions(inst: &ProblemInstance) -> AssumptionReport {
    let n = inst.n();
    let min_support = 2f64.powf(inst.rate_floor);
    let t_l = inst.subtree_leaves();
    let inv_eps = ceil_tolerant(1.0 / inst.epsilon) as u64;
    let small = inst.classification.small_count() as u64;
    let checks = vec![
        AssumptionCheck {
            id: 1,
            passed: n as f64 >= min_support,
            detail: format!("n = {n}, 2^R = {min_support}"),
        },
        AssumptionCheck {
            id: 2,
            passed: small >= t_l.saturating_add(inv_eps),
            detail: format!("|small| = {small}, T_L + ceil(1/eps) = {t_l} + {inv_eps}"),
        },
        AssumptionCheck {
            id: 3,
            passed: t_l >= inv_eps,
            detail: format!("T_L = {t_l}, ceil(1/eps) = {inv_eps}"),
        },
    ];
    AssumptionReport { checks }
}
