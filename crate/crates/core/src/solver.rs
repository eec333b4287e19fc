//! The approximation scheme end to end, plus independent verification.
//!
//! For every height vector of depth at most `d`:
//!
//! 1. assign the atomic units with the reachability DP,
//! 2. unpack blocks to tokens and seed every leaf with a small token,
//! 3. accept directly if the tree meets the rate floor, otherwise repair a
//!    depth-`d` leaf if there is one, otherwise discard.
//!
//! The accepted candidate with the least divergence wins; ties go to the
//! earlier height vector in enumeration order.

use std::fmt;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment_dp::{discretize, run_dp, DiscretizedInstance, DEFAULT_STATE_CAP};
use crate::blocking::{build_atomic_units, unpack, AtomicUnit};
use crate::distribution::{check_assumptions, ProblemInstance, TokenDistribution};
use crate::error::{Result, TppError};
use crate::transform::{repair, seed, SeedSet};
use crate::tree::{dyadic, enumerate_height_vectors, kraft_check, HeightVector, Partition};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Direct,
    Repaired,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Direct => "direct",
            Branch::Repaired => "repaired",
        })
    }
}

/// Why a candidate height vector produced no solution.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DiscardReason {
    MoreLeavesThanTokens { leaves: usize, tokens: usize },
    NotEnoughSmallItems { needed: usize, available: usize },
    RateBelowFloorWithoutDepthLeaf { rate: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Discard {
    pub heights: HeightVector,
    #[serde(flatten)]
    pub reason: DiscardReason,
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub state_cap: usize,
    /// Worker threads; `None` uses the global rayon pool.
    pub jobs: Option<usize>,
    /// Fail on violated instance assumptions (the default). When off, the
    /// violations are only reported and candidates that run short of small
    /// items are discarded; the additive guarantee no longer applies.
    pub enforce_assumptions: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            state_cap: DEFAULT_STATE_CAP,
            jobs: None,
            enforce_assumptions: true,
        }
    }
}

/// A feasible `(partition, heights)` pair with diagnostics.
#[derive(Clone, Debug)]
pub struct Solution {
    /// Sorted-distribution positions per leaf.
    pub partition: Partition,
    pub heights: HeightVector,
    pub divergence: f64,
    pub rate: f64,
    pub branch: Branch,
    /// Height vectors considered, discarded ones included.
    pub candidate_count: usize,
    pub discards: Vec<Discard>,
    /// Largest DP layer over all candidates.
    pub frontier_max: usize,
    pub elapsed: Duration,
}

/// Serialized form of a [`Solution`], with original token ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub heights: Vec<u32>,
    pub partition: Vec<Vec<usize>>,
    pub divergence: f64,
    pub rate: f64,
    pub branch: Branch,
}

impl Solution {
    pub fn to_record(&self, dist: &TokenDistribution) -> SolutionRecord {
        let ids = dist.token_ids();
        let partition = self
            .partition
            .sets()
            .iter()
            .map(|set| {
                let mut out: Vec<usize> = set.iter().map(|&i| ids[i]).collect();
                out.sort_unstable();
                out
            })
            .collect();
        SolutionRecord {
            heights: self.heights.depths().to_vec(),
            partition,
            divergence: self.divergence,
            rate: self.rate,
            branch: self.branch,
        }
    }

    pub fn to_json(&self, dist: &TokenDistribution) -> String {
        serde_json::to_string(&self.to_record(dist)).expect("solution records always serialize")
    }
}

impl SolutionRecord {
    /// Maps the record back onto sorted positions of `dist`.
    pub fn to_parts(&self, dist: &TokenDistribution) -> Result<(HeightVector, Partition)> {
        let heights = HeightVector::new(self.heights.clone())?;
        if self.partition.len() != heights.len() {
            return Err(TppError::LengthMismatch {
                expected: heights.len(),
                found: self.partition.len(),
            });
        }
        let rank = dist.rank_of_token();
        let sets = self
            .partition
            .iter()
            .map(|set| {
                set.iter()
                    .map(|id| {
                        rank.get(id)
                            .copied()
                            .ok_or(TppError::UnknownToken { token: *id })
                    })
                    .collect::<Result<Vec<usize>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((heights, Partition::from_sets(sets, dist.probs())))
    }
}

/// Runs the scheme with default options.
pub fn solve(inst: &ProblemInstance) -> Result<Solution> {
    solve_with(inst, &SolveOptions::default())
}

pub fn solve_with(inst: &ProblemInstance, opts: &SolveOptions) -> Result<Solution> {
    let report = check_assumptions(inst);
    if opts.enforce_assumptions {
        if let Some(failed) = report.first_failure() {
            return Err(TppError::AssumptionFailed {
                id: failed.id,
                report: report.clone(),
            });
        }
    }
    match opts.jobs {
        Some(jobs) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.max(1))
                .build()
                .map_err(|e| TppError::InvalidParameter(format!("thread pool: {e}")))?;
            pool.install(|| solve_inner(inst, opts))
        }
        None => solve_inner(inst, opts),
    }
}

struct Accepted {
    partition: Partition,
    heights: HeightVector,
    divergence: f64,
    branch: Branch,
}

enum Outcome {
    Accepted(Box<Accepted>, usize),
    Discarded(Discard),
}

struct Context<'a> {
    inst: &'a ProblemInstance,
    units: Vec<AtomicUnit>,
    disc: DiscretizedInstance,
    state_cap: usize,
}

fn solve_inner(inst: &ProblemInstance, opts: &SolveOptions) -> Result<Solution> {
    let start = Instant::now();
    let units = build_atomic_units(&inst.dist, inst.epsilon);
    let disc = discretize(&units, inst.epsilon);
    let ctx = Context {
        inst,
        units,
        disc,
        state_cap: opts.state_cap,
    };
    let candidates: Vec<HeightVector> = enumerate_height_vectors(inst.depth)?
        .into_iter()
        .map(|(h, _)| h)
        .collect();

    let outcomes: Vec<Result<Outcome>> = candidates.par_iter().map(|h| evaluate(&ctx, h)).collect();

    let mut best: Option<Accepted> = None;
    let mut discards = Vec::new();
    let mut frontier_max = 0;
    for outcome in outcomes {
        match outcome? {
            Outcome::Accepted(acc, frontier) => {
                frontier_max = frontier_max.max(frontier);
                if best.as_ref().is_none_or(|b| acc.divergence < b.divergence) {
                    best = Some(*acc);
                }
            }
            Outcome::Discarded(d) => discards.push(d),
        }
    }
    let best = best.ok_or(TppError::NoCandidate {
        discards: discards.clone(),
    })?;
    Ok(Solution {
        rate: best.heights.rate(),
        partition: best.partition,
        heights: best.heights,
        divergence: best.divergence,
        branch: best.branch,
        candidate_count: candidates.len(),
        discards,
        frontier_max,
        elapsed: start.elapsed(),
    })
}

fn evaluate(ctx: &Context<'_>, h: &HeightVector) -> Result<Outcome> {
    let inst = ctx.inst;
    let discard = |reason| {
        Ok(Outcome::Discarded(Discard {
            heights: h.clone(),
            reason,
        }))
    };

    let leaves = h.len();
    if leaves > inst.n() {
        return discard(DiscardReason::MoreLeavesThanTokens {
            leaves,
            tokens: inst.n(),
        });
    }
    let rate = h.rate();
    let direct = rate >= inst.rate_floor;
    if !direct && !h.has_leaf_at(inst.depth) {
        return discard(DiscardReason::RateBelowFloorWithoutDepthLeaf { rate });
    }
    let reserve = if direct {
        0
    } else {
        inst.subtree_leaves() as usize
    };
    let small = &inst.classification.small_indices;
    let seeds = SeedSet::select(small, leaves, reserve).ok();
    let short = DiscardReason::NotEnoughSmallItems {
        needed: leaves + reserve,
        available: small.len(),
    };
    if seeds.is_none() && !direct {
        return discard(short);
    }

    let dp = run_dp(&ctx.disc, h, ctx.state_cap)?;
    let unpacked = unpack(&dp.assignment, &ctx.units, &inst.dist)?;
    let seeded = match &seeds {
        Some(seeds) => seed(&unpacked, h, seeds, &inst.dist)?,
        // Without enough small tokens to seed every leaf, a DP partition that
        // already covers all leaves is still feasible.
        None if unpacked.is_surjective() => unpacked,
        None => return discard(short),
    };

    let (partition, heights, branch) = match seeds {
        Some(seeds) if !direct => {
            let (p, hh) = repair(&seeded, h, &seeds.repair_reserve, inst)?;
            (p, hh, Branch::Repaired)
        }
        _ => (seeded, h.clone(), Branch::Direct),
    };
    let divergence = partition.divergence(&heights)?;
    Ok(Outcome::Accepted(
        Box::new(Accepted {
            partition,
            heights,
            divergence,
            branch,
        }),
        dp.frontier_max(),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Recomputes every property of a solution from scratch.
pub fn verify(sol: &Solution, inst: &ProblemInstance) -> VerificationReport {
    verify_record(&sol.to_record(&inst.dist), inst)
}

/// Like [`verify`], for a record read from disk. Nothing in the record is
/// trusted: depths need not be Kraft-tight and ids need not exist.
pub fn verify_record(record: &SolutionRecord, inst: &ProblemInstance) -> VerificationReport {
    let dist = &inst.dist;
    let rank = dist.rank_of_token();
    let mut checks = Vec::new();

    let kraft = kraft_check(&record.heights);
    let max = record.heights.iter().copied().max().unwrap_or(0);
    let units: Option<u128> = (max <= 127).then(|| {
        record
            .heights
            .iter()
            .map(|&h| 1u128 << (max - h))
            .fold(0u128, u128::saturating_add)
    });
    checks.push(Check {
        name: "kraft",
        passed: kraft,
        detail: match units {
            Some(u) => format!("sum 2^(max-h) = {u}, 2^max = 2^{max}"),
            None => format!("max depth {max}"),
        },
    });

    let rate: f64 = record.heights.iter().map(|&h| dyadic(h) * h as f64).sum();
    checks.push(Check {
        name: "rate",
        passed: rate >= inst.rate_floor,
        detail: format!("rate {rate} vs floor {}", inst.rate_floor),
    });
    checks.push(Check {
        name: "rate_reported",
        passed: (rate - record.rate).abs() <= 1e-12,
        detail: format!("recomputed {rate}, reported {}", record.rate),
    });

    let shape_ok = record.partition.len() == record.heights.len();
    checks.push(Check {
        name: "leaf_count",
        passed: shape_ok,
        detail: format!(
            "{} sets for {} leaves",
            record.partition.len(),
            record.heights.len()
        ),
    });

    let mut seen = vec![0usize; dist.len()];
    let mut unknown = Vec::new();
    for set in &record.partition {
        for id in set {
            match rank.get(id) {
                Some(&r) => seen[r] += 1,
                None => unknown.push(*id),
            }
        }
    }
    let duplicated: Vec<usize> = (0..dist.len())
        .filter(|&r| seen[r] > 1)
        .map(|r| dist.token_ids()[r])
        .collect();
    let missing: Vec<usize> = (0..dist.len())
        .filter(|&r| seen[r] == 0)
        .map(|r| dist.token_ids()[r])
        .collect();
    checks.push(Check {
        name: "disjoint",
        passed: duplicated.is_empty(),
        detail: format!("tokens in several leaves: {duplicated:?}"),
    });
    checks.push(Check {
        name: "coverage",
        passed: missing.is_empty() && unknown.is_empty(),
        detail: format!("missing {missing:?}, unknown {unknown:?}"),
    });
    let empty: Vec<usize> = (0..record.partition.len())
        .filter(|&j| record.partition[j].is_empty())
        .collect();
    checks.push(Check {
        name: "surjective",
        passed: empty.is_empty(),
        detail: format!("empty leaves {empty:?}"),
    });

    let divergence: f64 = record
        .partition
        .iter()
        .zip(&record.heights)
        .map(|(set, &h)| {
            let mass: f64 = set
                .iter()
                .filter_map(|id| rank.get(id))
                .map(|&r| dist.prob(r))
                .sum();
            (dyadic(h) - mass).abs()
        })
        .sum();
    checks.push(Check {
        name: "divergence",
        passed: shape_ok && (divergence - record.divergence).abs() <= 1e-12,
        detail: format!("recomputed {divergence}, reported {}", record.divergence),
    });

    VerificationReport { checks }
}
