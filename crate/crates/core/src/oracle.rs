//! Exhaustive optimum for tiny instances.
//!
//! Enumerates every Kraft-tight height vector up to `max_depth` that meets
//! the rate floor and every partition of the support into exactly `L`
//! non-empty blocks. For a fixed unlabeled partition, the best way to hand the
//! blocks to leaves is the sorted matching (heaviest block to the largest
//! target), since `Σ |x_i - y_π(i)|` is minimized by pairing both sequences in
//! the same order. That covers all `L!·S(n, L)` labeled assignments while only
//! visiting the `S(n, L)` unlabeled ones.

use serde::Serialize;

use crate::distribution::TokenDistribution;
use crate::error::{Result, TppError};
use crate::tree::{enumerate_height_vectors, HeightVector, Partition};

pub const ORACLE_MAX_TOKENS: usize = 10;
pub const ORACLE_MAX_DEPTH: u32 = 4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleResult {
    pub opt_divergence: f64,
    #[serde(skip)]
    pub opt_partition: Partition,
    pub opt_heights: HeightVector,
    /// Labeled surjective assignments covered, summed over feasible trees.
    pub search_space_size: u128,
}

pub fn brute_force(
    dist: &TokenDistribution,
    rate_floor: f64,
    max_depth: u32,
) -> Result<OracleResult> {
    let n = dist.len();
    if n > ORACLE_MAX_TOKENS {
        return Err(TppError::Guard(format!(
            "oracle supports at most {ORACLE_MAX_TOKENS} tokens, got {n}"
        )));
    }
    if max_depth > ORACLE_MAX_DEPTH {
        return Err(TppError::Guard(format!(
            "oracle supports depth at most {ORACLE_MAX_DEPTH}, got {max_depth}"
        )));
    }
    let probs = dist.probs();
    let trees: Vec<HeightVector> = enumerate_height_vectors(max_depth)?
        .into_iter()
        .map(|(h, _)| h)
        .filter(|h| h.len() <= n && h.rate() >= rate_floor)
        .collect();

    // Block-mass profiles of every unlabeled partition, grouped by block count.
    let mut by_blocks: Vec<Vec<Vec<usize>>> = vec![Vec::new(); n + 1];
    for_each_set_partition(n, |labels, blocks| by_blocks[blocks].push(labels.to_vec()));

    let mut best: Option<(f64, HeightVector, Vec<usize>, Vec<usize>)> = None;
    let mut space: u128 = 0;
    for h in &trees {
        let l = h.len();
        space += labeled_count(n, l);
        let targets = h.targets();
        for labels in &by_blocks[l] {
            let mut mass = vec![0.0; l];
            for (i, &b) in labels.iter().enumerate() {
                mass[b] += probs[i];
            }
            let mut order: Vec<usize> = (0..l).collect();
            order.sort_by(|&a, &b| mass[b].total_cmp(&mass[a]));
            let value: f64 = order
                .iter()
                .zip(&targets)
                .map(|(&block, &t)| (t - mass[block]).abs())
                .sum();
            if best.as_ref().is_none_or(|(b, ..)| value < *b) {
                best = Some((value, h.clone(), labels.clone(), order));
            }
        }
    }

    let (opt_divergence, opt_heights, labels, order) = best.ok_or_else(|| {
        TppError::Guard(format!(
            "no tree of depth <= {max_depth} with at most {n} leaves reaches rate {rate_floor}"
        ))
    })?;
    let mut leaf_of_block = vec![0; order.len()];
    for (leaf, &block) in order.iter().enumerate() {
        leaf_of_block[block] = leaf;
    }
    let leaf_of: Vec<usize> = labels.iter().map(|&b| leaf_of_block[b]).collect();
    let opt_partition = Partition::from_leaf_map(&leaf_of, opt_heights.len(), probs)?;
    Ok(OracleResult {
        opt_divergence,
        opt_partition,
        opt_heights,
        search_space_size: space,
    })
}

/// `L! · S(n, L)`, the number of surjections `[n] → [L]`.
fn labeled_count(n: usize, l: usize) -> u128 {
    // inclusion-exclusion: Σ_k (-1)^k C(L,k) (L-k)^n
    let mut total: i128 = 0;
    let mut binom: i128 = 1;
    for k in 0..=l {
        let term = binom * ((l - k) as i128).pow(n as u32);
        total += if k % 2 == 0 { term } else { -term };
        binom = binom * (l - k) as i128 / (k + 1) as i128;
    }
    total as u128
}

/// Visits every set partition of `[n]` as a restricted growth string, in
/// lexicographic order, together with its block count.
fn for_each_set_partition(n: usize, mut visit: impl FnMut(&[usize], usize)) {
    fn rec(
        i: usize,
        blocks: usize,
        labels: &mut Vec<usize>,
        n: usize,
        visit: &mut impl FnMut(&[usize], usize),
    ) {
        if i == n {
            visit(labels, blocks);
            return;
        }
        for b in 0..=blocks {
            labels.push(b);
            rec(i + 1, blocks.max(b + 1), labels, n, visit);
            labels.pop();
        }
    }
    if n == 0 {
        return;
    }
    let mut labels = Vec::with_capacity(n);
    rec(0, 0, &mut labels, n, &mut visit);
}
