//! Height vectors of full binary trees, leaf partitions, rate and divergence.
//!
//! A full binary tree is described only by the multiset of its leaf depths.
//! Both quantities the solver cares about depend on nothing else:
//!
//! * rate `Σ 2^{-h_j}·h_j`, the expected number of path bits per leaf visit;
//! * divergence `Σ |2^{-h_j} - Pr(S_j)|` against the masses of a partition.
//!
//! Depths are kept sorted ascending, so leaf `j` always has the `j`-th smallest
//! depth and the largest dyadic target.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TppError};

/// Deepest leaf a [`HeightVector`] may carry. Canonical codewords are held
/// in a `u128`.
pub const MAX_DEPTH: u32 = 120;

/// Upper limit accepted by [`enumerate_height_vectors`].
pub const MAX_ENUMERATION_DEPTH: u32 = 20;

/// Exact Kraft equality `Σ 2^{-h_j} = 1` in integer arithmetic.
///
/// Works bottom-up on the depth histogram: the leaves and carried internal
/// nodes at every level must pair up, leaving exactly one node at the root.
pub fn kraft_check(depths: &[u32]) -> bool {
    let Some(&max) = depths.iter().max() else {
        return false;
    };
    let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
    for &h in depths {
        *counts.entry(h).or_default() += 1;
    }
    let mut carry: u64 = 0;
    for level in (1..=max).rev() {
        let nodes = carry + counts.get(&level).copied().unwrap_or(0);
        if !nodes.is_multiple_of(2) {
            return false;
        }
        carry = nodes / 2;
    }
    carry + counts.get(&0).copied().unwrap_or(0) == 1
}

/// Sorted leaf depths of a full binary tree.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct HeightVector {
    depths: Vec<u32>,
}

impl HeightVector {
    pub fn new(mut depths: Vec<u32>) -> Result<Self> {
        if depths.is_empty() {
            return Err(TppError::InvalidHeights("no leaves".into()));
        }
        depths.sort_unstable();
        let max = *depths.last().unwrap();
        if max > MAX_DEPTH {
            return Err(TppError::InvalidHeights(format!(
                "depth {max} exceeds the supported maximum {MAX_DEPTH}"
            )));
        }
        if !kraft_check(&depths) {
            return Err(TppError::InvalidHeights(format!(
                "{depths:?} violates Kraft equality"
            )));
        }
        Ok(HeightVector { depths })
    }

    /// The single-leaf tree.
    pub fn root() -> Self {
        HeightVector { depths: vec![0] }
    }

    pub fn depths(&self) -> &[u32] {
        &self.depths
    }

    /// Number of leaves `L`.
    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_depth(&self) -> u32 {
        *self.depths.last().unwrap()
    }

    pub fn depth(&self, leaf: usize) -> u32 {
        self.depths[leaf]
    }

    /// Dyadic target mass `2^{-h_j}` of leaf `j`.
    pub fn target(&self, leaf: usize) -> f64 {
        dyadic(self.depths[leaf])
    }

    pub fn targets(&self) -> Vec<f64> {
        self.depths.iter().map(|&h| dyadic(h)).collect()
    }

    /// `Σ_j 2^{max_depth - h_j}`, which equals `2^{max_depth}` for every
    /// valid vector.
    pub fn kraft_units(&self) -> u128 {
        let max = self.max_depth();
        self.depths.iter().map(|&h| 1u128 << (max - h)).sum()
    }

    pub fn has_leaf_at(&self, depth: u32) -> bool {
        self.depths.binary_search(&depth).is_ok()
    }

    pub fn rate(&self) -> f64 {
        rate(self)
    }
}

impl TryFrom<Vec<u32>> for HeightVector {
    type Error = TppError;

    fn try_from(depths: Vec<u32>) -> Result<Self> {
        HeightVector::new(depths)
    }
}

impl From<HeightVector> for Vec<u32> {
    fn from(h: HeightVector) -> Self {
        h.depths
    }
}

pub(crate) fn dyadic(depth: u32) -> f64 {
    2f64.powi(-(depth as i32))
}

/// Information rate `Σ_j 2^{-h_j} h_j`.
pub fn rate(h: &HeightVector) -> f64 {
    h.depths.iter().map(|&d| dyadic(d) * d as f64).sum()
}

/// Unhalved total variation `Σ_j |2^{-h_j} - masses[j]|`.
pub fn divergence(masses: &[f64], h: &HeightVector) -> Result<f64> {
    if masses.len() != h.len() {
        return Err(TppError::LengthMismatch {
            expected: h.len(),
            found: masses.len(),
        });
    }
    Ok(masses
        .iter()
        .zip(&h.depths)
        .map(|(&m, &d)| (dyadic(d) - m).abs())
        .sum())
}

/// Canonical prefix code for the leaves of `h`, as `(codeword, length)`.
///
/// Leaves are taken in sorted depth order and each codeword is the previous
/// one plus one, shifted left to the new length. Kraft equality guarantees the
/// result is a complete prefix-free code; the last codeword is all ones.
pub fn canonical_codes(h: &HeightVector) -> Vec<(u128, u32)> {
    let mut codes = Vec::with_capacity(h.len());
    let mut code: u128 = 0;
    let mut prev_len = h.depths[0];
    for (i, &len) in h.depths.iter().enumerate() {
        if i > 0 {
            code = (code + 1) << (len - prev_len);
        }
        codes.push((code, len));
        prev_len = len;
    }
    codes
}

/// Every Kraft-tight depth multiset with maximum depth `<= d_max`, in
/// lexicographic order of the sorted depth lists. The flag marks vectors with
/// at least one leaf at depth exactly `d_max`.
///
/// Walks the level-by-level leaf counts: with `m` open nodes at some level,
/// any `c <= m` of them become leaves and the remaining `m - c` split into
/// `2(m - c)` nodes one level down. Each count profile is one multiset, so no
/// deduplication is needed.
pub fn enumerate_height_vectors(d_max: u32) -> Result<Vec<(HeightVector, bool)>> {
    if d_max > MAX_ENUMERATION_DEPTH {
        return Err(TppError::Guard(format!(
            "enumeration depth {d_max} exceeds {MAX_ENUMERATION_DEPTH}"
        )));
    }
    let mut out = Vec::new();
    let mut depths = Vec::new();
    walk_levels(0, 1, d_max, &mut depths, &mut out);
    out.sort_unstable();
    Ok(out
        .into_iter()
        .map(|depths| {
            let flag = depths.last() == Some(&d_max);
            (HeightVector { depths }, flag)
        })
        .collect())
}

fn walk_levels(level: u32, open: u64, d_max: u32, depths: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if level == d_max {
        let before = depths.len();
        depths.extend(std::iter::repeat_n(level, open as usize));
        out.push(depths.clone());
        depths.truncate(before);
        return;
    }
    for leaves in (0..=open).rev() {
        let before = depths.len();
        depths.extend(std::iter::repeat_n(level, leaves as usize));
        let internal = open - leaves;
        if internal == 0 {
            out.push(depths.clone());
        } else {
            walk_levels(level + 1, 2 * internal, d_max, depths, out);
        }
        depths.truncate(before);
    }
}

/// Assignment of token positions to the leaves of a tree.
///
/// `sets[j]` holds positions into the sorted [`TokenDistribution`] and
/// `masses[j]` their summed probability. Leaves may be empty; surjectivity
/// is a property checked with [`Partition::is_surjective`].
///
/// [`TokenDistribution`]: crate::distribution::TokenDistribution
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    sets: Vec<Vec<usize>>,
    masses: Vec<f64>,
}

impl Partition {
    pub fn from_sets(sets: Vec<Vec<usize>>, probs: &[f64]) -> Self {
        let masses = sets
            .iter()
            .map(|s| s.iter().map(|&i| probs[i]).sum())
            .collect();
        Partition { sets, masses }
    }

    /// Builds a partition from a token-to-leaf map.
    pub fn from_leaf_map(leaf_of: &[usize], leaves: usize, probs: &[f64]) -> Result<Self> {
        if leaf_of.len() != probs.len() {
            return Err(TppError::LengthMismatch {
                expected: probs.len(),
                found: leaf_of.len(),
            });
        }
        let mut sets = vec![Vec::new(); leaves];
        for (token, &leaf) in leaf_of.iter().enumerate() {
            if leaf >= leaves {
                return Err(TppError::LeafOutOfRange { leaf, leaves });
            }
            sets[leaf].push(token);
        }
        Ok(Partition::from_sets(sets, probs))
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn set(&self, leaf: usize) -> &[usize] {
        &self.sets[leaf]
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Every leaf holds at least one token.
    pub fn is_surjective(&self) -> bool {
        self.sets.iter().all(|s| !s.is_empty())
    }

    /// Leaf index of every token, `None` for tokens not present.
    pub fn leaf_of(&self, n: usize) -> Vec<Option<usize>> {
        let mut map = vec![None; n];
        for (leaf, set) in self.sets.iter().enumerate() {
            for &t in set {
                if t < n {
                    map[t] = Some(leaf);
                }
            }
        }
        map
    }

    pub fn divergence(&self, h: &HeightVector) -> Result<f64> {
        divergence(&self.masses, h)
    }

    /// Moves `token` from leaf `from` to leaf `to`, recomputing both masses.
    #[cfg(test)]
    pub(crate) fn move_token(&mut self, token: usize, from: usize, to: usize, probs: &[f64]) {
        if from == to {
            return;
        }
        if let Some(pos) = self.sets[from].iter().position(|&t| t == token) {
            self.sets[from].remove(pos);
            self.sets[to].push(token);
            self.masses[from] = self.sets[from].iter().map(|&i| probs[i]).sum();
            self.masses[to] = self.sets[to].iter().map(|&i| probs[i]).sum();
        }
    }

    /// Applies `(token, to)` moves with a single pass over the sets. Same
    /// result as calling [`Partition::move_token`] for each pair in order,
    /// for distinct tokens.
    pub(crate) fn move_tokens(&mut self, moves: &[(usize, usize)], probs: &[f64]) -> Result<()> {
        let mut dest = moves.to_vec();
        dest.sort_unstable();
        let mut seen = HashSet::with_capacity(dest.len());
        let mut moved = HashSet::with_capacity(dest.len());
        let mut touched = vec![false; self.sets.len()];
        for (leaf, set) in self.sets.iter_mut().enumerate() {
            set.retain(|t| match dest.binary_search_by_key(t, |&(u, _)| u) {
                Ok(i) => {
                    let to = dest[i].1;
                    seen.insert(*t);
                    if to == leaf {
                        return true;
                    }
                    moved.insert(*t);
                    touched[leaf] = true;
                    false
                }
                Err(_) => true,
            });
        }
        if let Some(&(token, _)) = moves.iter().find(|(t, _)| !seen.contains(t)) {
            return Err(TppError::UnknownToken { token });
        }
        for &(token, to) in moves {
            if moved.contains(&token) {
                self.sets[to].push(token);
                touched[to] = true;
            }
        }
        for (leaf, _) in touched.iter().enumerate().filter(|(_, &t)| t) {
            self.masses[leaf] = self.sets[leaf].iter().map(|&i| probs[i]).sum();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn hv(d: &[u32]) -> HeightVector {
        HeightVector::new(d.to_vec()).unwrap()
    }

    #[test]
    fn rate_examples() {
        assert_eq!(rate(&hv(&[2, 2, 2, 3, 3])), 2.25);
        assert_eq!(rate(&hv(&[0])), 0.0);
        assert_eq!(rate(&hv(&[1, 1])), 1.0);
    }

    #[test]
    fn divergence_examples() {
        let h = hv(&[2, 2, 2, 3, 3]);
        let d = divergence(&[0.30, 0.22, 0.20, 0.12, 0.16], &h).unwrap();
        assert!((d - 0.17).abs() < 1e-12);
        assert_eq!(
            divergence(&[0.25, 0.25, 0.25, 0.125, 0.125], &h).unwrap(),
            0.0
        );
        assert_eq!(divergence(&[1.0], &hv(&[0])).unwrap(), 0.0);
        assert!(matches!(
            divergence(&[0.5], &h),
            Err(TppError::LengthMismatch {
                expected: 5,
                found: 1
            })
        ));
    }

    #[test]
    fn kraft_examples() {
        assert!(kraft_check(&[2, 2, 2, 3, 3]));
        assert!(!kraft_check(&[1, 1, 1]));
        assert!(kraft_check(&[0]));
        assert!(!kraft_check(&[1]));
        assert!(!kraft_check(&[]));
        assert!(!kraft_check(&[0, 1, 1]));
        // deep but valid: a caterpillar down to depth 200
        let mut deep: Vec<u32> = (1..=200).collect();
        deep.push(200);
        assert!(kraft_check(&deep));
    }

    #[test]
    fn height_vector_rejects_invalid() {
        assert!(HeightVector::new(vec![]).is_err());
        assert!(HeightVector::new(vec![1, 1, 1]).is_err());
        let h = HeightVector::new(vec![3, 2, 2, 3, 2]).unwrap();
        assert_eq!(h.depths(), &[2, 2, 2, 3, 3]);
        assert_eq!(h.kraft_units(), 8);
        assert_eq!(h.max_depth(), 3);
    }

    #[test]
    fn serde_round_trip() {
        let h = hv(&[2, 2, 2, 3, 3]);
        let json = serde_json::to_string(&h).unwrap();
        assert_eq!(json, "[2,2,2,3,3]");
        let back: HeightVector = serde_json::from_str(&json).unwrap();
        assert_eq!(back, h);
        assert!(serde_json::from_str::<HeightVector>("[1,1,1]").is_err());
    }

    #[test]
    fn canonical_codes_are_complete_prefix_code() {
        let codes = canonical_codes(&hv(&[1, 2, 2]));
        assert_eq!(codes, vec![(0b0, 1), (0b10, 2), (0b11, 2)]);
        let codes = canonical_codes(&hv(&[2, 2, 2, 3, 3]));
        assert_eq!(codes, vec![(0, 2), (1, 2), (2, 2), (6, 3), (7, 3)]);
    }

    #[test]
    fn enumeration_small_cases() {
        let e0 = enumerate_height_vectors(0).unwrap();
        assert_eq!(e0, vec![(hv(&[0]), true)]);

        let e2: Vec<Vec<u32>> = enumerate_height_vectors(2)
            .unwrap()
            .into_iter()
            .map(|(h, _)| h.depths().to_vec())
            .collect();
        assert_eq!(
            e2,
            vec![vec![0], vec![1, 1], vec![1, 2, 2], vec![2, 2, 2, 2]]
        );

        let flags: Vec<bool> = enumerate_height_vectors(2)
            .unwrap()
            .iter()
            .map(|x| x.1)
            .collect();
        assert_eq!(flags, vec![false, false, true, true]);

        assert!(enumerate_height_vectors(21).is_err());
    }

    // Independent oracle: enumerate actual tree shapes (T(k) = 1 + T(k-1)^2 of
    // them) and collect the distinct leaf-depth multisets.
    fn shape_multisets(budget: u32) -> BTreeSet<Vec<u32>> {
        fn shapes(budget: u32) -> Vec<Vec<u32>> {
            let mut out = vec![vec![0]];
            if budget > 0 {
                let sub = shapes(budget - 1);
                for l in &sub {
                    for r in &sub {
                        let mut d: Vec<u32> = l.iter().chain(r).map(|x| x + 1).collect();
                        d.sort_unstable();
                        out.push(d);
                    }
                }
            }
            out
        }
        let all = shapes(budget);
        if budget == 4 {
            assert_eq!(all.len(), 677);
        }
        all.into_iter().collect()
    }

    #[test]
    fn enumeration_matches_shape_oracle() {
        for d in 0..=4 {
            let fast: Vec<Vec<u32>> = enumerate_height_vectors(d)
                .unwrap()
                .into_iter()
                .map(|(h, _)| h.depths().to_vec())
                .collect();
            let oracle: Vec<Vec<u32>> = shape_multisets(d).into_iter().collect();
            assert_eq!(fast, oracle, "d = {d}");
        }
        assert_eq!(enumerate_height_vectors(3).unwrap().len(), 10);
    }

    #[test]
    fn enumeration_is_nested() {
        let big = enumerate_height_vectors(5).unwrap();
        for d in 0..5 {
            let small: Vec<HeightVector> = enumerate_height_vectors(d)
                .unwrap()
                .into_iter()
                .map(|x| x.0)
                .collect();
            let filtered: Vec<HeightVector> = big
                .iter()
                .filter(|(h, _)| h.max_depth() <= d)
                .map(|(h, _)| h.clone())
                .collect();
            assert_eq!(small, filtered);
        }
        for (h, flag) in &big {
            assert!(kraft_check(h.depths()));
            assert_eq!(*flag, h.max_depth() == 5);
        }
    }

    #[test]
    fn partition_bookkeeping() {
        let probs = [0.4, 0.3, 0.2, 0.1];
        let mut p = Partition::from_leaf_map(&[0, 0, 1, 1], 3, &probs).unwrap();
        assert!(!p.is_surjective());
        p.move_token(3, 1, 2, &probs);
        assert!(p.is_surjective());
        assert!((p.masses()[0] - 0.7).abs() < 1e-15);
        assert_eq!(p.masses()[2], 0.1);
        assert_eq!(p.leaf_of(4), vec![Some(0), Some(0), Some(1), Some(2)]);
        assert!(matches!(
            p.move_tokens(&[(0, 1), (7, 1)], &probs),
            Err(TppError::UnknownToken { token: 7 })
        ));
        assert!(matches!(
            Partition::from_leaf_map(&[0, 5, 0, 0], 3, &probs),
            Err(TppError::LeafOutOfRange { leaf: 5, leaves: 3 })
        ));
    }

    fn arb_heights() -> impl Strategy<Value = HeightVector> {
        let all: Vec<HeightVector> = enumerate_height_vectors(4)
            .unwrap()
            .into_iter()
            .map(|x| x.0)
            .collect();
        prop::sample::select(all)
    }

    proptest! {
        #[test]
        fn batch_moves_match_single_moves(
            leaf_map in prop::collection::vec(0usize..4, 12),
            targets in prop::collection::vec((0usize..12, 0usize..4), 0..8),
        ) {
            let probs: Vec<f64> = (1..=12).map(|i| 1.0 / i as f64).collect();
            let mut moves: Vec<(usize, usize)> = Vec::new();
            for (t, to) in targets {
                if moves.iter().all(|&(u, _)| u != t) {
                    moves.push((t, to));
                }
            }
            let mut single = Partition::from_leaf_map(&leaf_map, 4, &probs).unwrap();
            let mut batch = single.clone();
            for &(t, to) in &moves {
                let from = single.leaf_of(12)[t].unwrap();
                single.move_token(t, from, to, &probs);
            }
            batch.move_tokens(&moves, &probs).unwrap();
            prop_assert_eq!(single, batch);
        }

        #[test]
        fn divergence_is_permutation_invariant_and_bounded(
            h in arb_heights(),
            raw in prop::collection::vec(0.0f64..1.0, 16),
            seed in any::<u64>(),
        ) {
            let l = h.len();
            let total: f64 = raw[..l].iter().sum::<f64>().max(1e-9);
            let masses: Vec<f64> = raw[..l].iter().map(|m| m / total).collect();
            let d = divergence(&masses, &h).unwrap();
            prop_assert!(d <= 2.0 + 1e-12);

            // permute masses and targets together
            let mut perm: Vec<usize> = (0..l).collect();
            let mut s = seed;
            for i in (1..l).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let targets = h.targets();
            let permuted: f64 = perm.iter().map(|&j| (targets[j] - masses[j]).abs()).sum();
            prop_assert!((permuted - d).abs() < 1e-12);
        }
    }
}
