//! Structural transforms on `(partition, heights)` pairs: depth truncation,
//! monotone reordering of leaf masses, seeding empty leaves with small tokens,
//! and rate repair by expanding a deep leaf into a uniform subtree.

use crate::distribution::{ProblemInstance, TokenDistribution};
use crate::error::{Result, TppError};
use crate::tree::{canonical_codes, HeightVector, Partition};

const SLACK: f64 = 1e-12;

/// Seed tokens (one per leaf) and the disjoint repair reserve, all small.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedSet {
    /// `seeds[j]` is forced into leaf `j`.
    pub seeds: Vec<usize>,
    pub repair_reserve: Vec<usize>,
}

impl SeedSet {
    /// Picks the `leaves` lightest small tokens as seeds and the next
    /// `reserve` lightest as the repair reserve.
    ///
    /// `small` must be in increasing position order, as produced by
    /// [`classify`](crate::distribution::classify), so the lightest tokens sit
    /// at its end.
    pub fn select(small: &[usize], leaves: usize, reserve: usize) -> Result<Self> {
        let needed = leaves + reserve;
        if small.len() < needed {
            return Err(TppError::InsufficientSmallItems {
                needed,
                available: small.len(),
            });
        }
        let mut lightest = small.iter().rev().copied();
        let seeds = lightest.by_ref().take(leaves).collect();
        let repair_reserve = lightest.take(reserve).collect();
        Ok(SeedSet {
            seeds,
            repair_reserve,
        })
    }
}

fn check_shape(partition: &Partition, h: &HeightVector) -> Result<()> {
    if partition.len() != h.len() {
        return Err(TppError::LengthMismatch {
            expected: h.len(),
            found: partition.len(),
        });
    }
    Ok(())
}

/// Cuts the tree at depth `d`, merging every group of leaves below a depth-`d`
/// node into that node.
///
/// Sibling structure is taken from the canonical code of `h`: leaves deeper
/// than `d` are grouped by the first `d` bits of their codeword.
pub fn truncate(
    partition: &Partition,
    h: &HeightVector,
    d: u32,
    probs: &[f64],
) -> Result<(Partition, HeightVector)> {
    check_shape(partition, h)?;
    if h.max_depth() <= d {
        return Ok((partition.clone(), h.clone()));
    }
    let codes = canonical_codes(h);
    let mut depths = Vec::with_capacity(h.len());
    let mut sets: Vec<Vec<usize>> = Vec::with_capacity(h.len());
    let mut open_prefix: Option<u128> = None;
    for (leaf, &(code, len)) in codes.iter().enumerate() {
        if len <= d {
            depths.push(len);
            sets.push(partition.set(leaf).to_vec());
            continue;
        }
        let prefix = code >> (len - d);
        if open_prefix != Some(prefix) {
            open_prefix = Some(prefix);
            depths.push(d);
            sets.push(Vec::new());
        }
        sets.last_mut()
            .unwrap()
            .extend_from_slice(partition.set(leaf));
    }
    for set in &mut sets {
        set.sort_unstable();
    }
    Ok((
        Partition::from_sets(sets, probs),
        HeightVector::new(depths)?,
    ))
}

/// Reorders leaf sets so that masses are non-increasing along the
/// (non-decreasing) depths. Stable on ties, hence idempotent.
pub fn monotone_reorder(
    partition: &Partition,
    h: &HeightVector,
    probs: &[f64],
) -> Result<Partition> {
    check_shape(partition, h)?;
    let mut order: Vec<usize> = (0..partition.len()).collect();
    order.sort_by(|&a, &b| partition.masses()[b].total_cmp(&partition.masses()[a]));
    let sets = order.iter().map(|&j| partition.set(j).to_vec()).collect();
    Ok(Partition::from_sets(sets, probs))
}

/// Moves `seeds.seeds[j]` into leaf `j` for every leaf.
///
/// # Panics
///
/// If the divergence moves by more than `2·Σ p(seed)`, which would mean the
/// partition bookkeeping is broken.
pub fn seed(
    partition: &Partition,
    h: &HeightVector,
    seeds: &SeedSet,
    dist: &TokenDistribution,
) -> Result<Partition> {
    check_shape(partition, h)?;
    if seeds.seeds.len() != h.len() {
        return Err(TppError::InsufficientSmallItems {
            needed: h.len(),
            available: seeds.seeds.len(),
        });
    }
    let probs = dist.probs();
    let mut out = partition.clone();
    let moves: Vec<(usize, usize)> = seeds
        .seeds
        .iter()
        .enumerate()
        .map(|(target, &token)| (token, target))
        .collect();
    out.move_tokens(&moves, probs)?;

    let before = partition.divergence(h)?;
    let after = out.divergence(h)?;
    let budget = 2.0 * seeds.seeds.iter().map(|&r| probs[r]).sum::<f64>();
    assert!(
        (after - before).abs() <= budget + SLACK,
        "seeding moved divergence by {} > {budget}",
        (after - before).abs()
    );
    debug_assert!(out.is_surjective());
    Ok(out)
}

/// Restores the rate floor by replacing the lightest depth-`d` leaf with a
/// complete subtree of `T_L` leaves.
///
/// Steps: reorder leaves monotonically, move every reserve token onto the
/// chosen leaf, then split that leaf into `T_L` sub-leaves at depth
/// `d + log₂ T_L`. Reserve token `r` goes to sub-leaf `r`; everything else
/// the leaf held goes to the first sub-leaf.
///
/// # Panics
///
/// If the result misses the rate floor or the divergence grows by more than
/// `4ε`; both are guaranteed when the reserve tokens are small.
pub fn repair(
    partition: &Partition,
    h: &HeightVector,
    reserve: &[usize],
    inst: &ProblemInstance,
) -> Result<(Partition, HeightVector)> {
    check_shape(partition, h)?;
    let d = inst.depth;
    let t_l = inst.subtree_leaves() as usize;
    if !h.has_leaf_at(d) {
        return Err(TppError::NoLeafAtDepth { depth: d });
    }
    if reserve.len() < t_l {
        return Err(TppError::InsufficientSmallItems {
            needed: t_l,
            available: reserve.len(),
        });
    }
    let reserve = &reserve[..t_l];
    let dist = &inst.dist;
    let probs = dist.probs();
    for &token in reserve {
        if token >= dist.len() {
            return Err(TppError::UnknownToken { token });
        }
        if probs[token] > inst.classification.theta {
            return Err(TppError::NotSmall { token });
        }
    }

    let ordered = monotone_reorder(partition, h, probs)?;
    // lightest depth-d leaf, the last one on ties
    let chosen = (0..h.len())
        .filter(|&j| h.depth(j) == d)
        .reduce(|best, j| {
            if ordered.masses()[j] <= ordered.masses()[best] {
                j
            } else {
                best
            }
        })
        .expect("a depth-d leaf exists");

    let mut migrated = ordered.clone();
    let moves: Vec<(usize, usize)> = reserve.iter().map(|&t| (t, chosen)).collect();
    migrated.move_tokens(&moves, probs)?;

    let sub_depth = d + inst.subtree_log2;
    let in_reserve: std::collections::HashSet<usize> = reserve.iter().copied().collect();
    let mut leaves: Vec<(u32, Vec<usize>)> = Vec::with_capacity(h.len() - 1 + t_l);
    for j in 0..h.len() {
        if j != chosen {
            leaves.push((h.depth(j), migrated.set(j).to_vec()));
        }
    }
    let mut first: Vec<usize> = migrated
        .set(chosen)
        .iter()
        .copied()
        .filter(|t| !in_reserve.contains(t))
        .collect();
    first.push(reserve[0]);
    first.sort_unstable();
    leaves.push((sub_depth, first));
    leaves.extend(reserve[1..].iter().map(|&t| (sub_depth, vec![t])));
    leaves.sort_by_key(|(depth, _)| *depth);

    let (depths, sets): (Vec<u32>, Vec<Vec<usize>>) = leaves.into_iter().unzip();
    let heights = HeightVector::new(depths)?;
    let repaired = Partition::from_sets(sets, probs);

    let rate = heights.rate();
    assert!(
        rate >= inst.rate_floor - SLACK,
        "repaired rate {rate} is below the floor {}",
        inst.rate_floor
    );
    let before = partition.divergence(h)?;
    let after = repaired.divergence(&heights)?;
    assert!(
        after <= before + 4.0 * inst.epsilon + SLACK,
        "repair raised divergence from {before} to {after}"
    );
    Ok((repaired, heights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::load_distribution;

    fn hv(d: &[u32]) -> HeightVector {
        HeightVector::new(d.to_vec()).unwrap()
    }

    /// One token per leaf whose probabilities equal the given masses.
    fn singleton(masses: &[f64]) -> (Partition, Vec<f64>) {
        let probs = masses.to_vec();
        let sets = (0..masses.len()).map(|i| vec![i]).collect();
        (Partition::from_sets(sets, &probs), probs)
    }

    #[test]
    fn truncate_within_depth_is_identity() {
        let (p, probs) = singleton(&[0.30, 0.22, 0.20, 0.12, 0.16]);
        let h = hv(&[2, 2, 2, 3, 3]);
        let (p2, h2) = truncate(&p, &h, 3, &probs).unwrap();
        assert_eq!((p2, h2), (p, h));
    }

    #[test]
    fn truncate_merges_deep_siblings() {
        let (p, probs) = singleton(&[0.5, 0.3, 0.1, 0.1]);
        let h = hv(&[1, 2, 3, 3]);
        // 0 + 0.05 + 0.025 + 0.025 before, 0 + 0.05 + 0.05 after
        assert!((p.divergence(&h).unwrap() - 0.10).abs() < 1e-12);
        let (p2, h2) = truncate(&p, &h, 2, &probs).unwrap();
        assert_eq!(h2.depths(), &[1, 2, 2]);
        assert_eq!(p2.sets(), &[vec![0], vec![1], vec![2, 3]]);
        assert!((p2.masses()[2] - 0.2).abs() < 1e-15);
        assert!((p2.divergence(&h2).unwrap() - 0.10).abs() < 1e-12);
    }

    #[test]
    fn truncate_to_root() {
        let (p, probs) = singleton(&[0.5, 0.5]);
        let (p2, h2) = truncate(&p, &hv(&[1, 1]), 0, &probs).unwrap();
        assert_eq!(h2.depths(), &[0]);
        assert_eq!(p2.masses(), &[1.0]);
        assert_eq!(p2.divergence(&h2).unwrap(), 0.0);
    }

    #[test]
    fn reorder_examples() {
        let (p, probs) = singleton(&[0.1, 0.9]);
        let h = hv(&[1, 1]);
        let r = monotone_reorder(&p, &h, &probs).unwrap();
        assert_eq!(r.masses(), &[0.9, 0.1]);
        assert!((r.divergence(&h).unwrap() - 0.8).abs() < 1e-12);
        assert!((p.divergence(&h).unwrap() - 0.8).abs() < 1e-12);

        let (p, probs) = singleton(&[0.1, 0.5, 0.4]);
        let h = hv(&[1, 2, 2]);
        let r = monotone_reorder(&p, &h, &probs).unwrap();
        assert_eq!(r.masses(), &[0.5, 0.4, 0.1]);
        assert!((p.divergence(&h).unwrap() - 0.8).abs() < 1e-12);
        // 0 + 0.15 + 0.15
        assert!((r.divergence(&h).unwrap() - 0.3).abs() < 1e-12);

        let sorted = monotone_reorder(&r, &h, &probs).unwrap();
        assert_eq!(sorted, r);
    }

    #[test]
    fn seeding_examples() {
        let dist = load_distribution(&[0.6, 0.39, 0.01], false).unwrap();
        let h = hv(&[1, 1]);
        let p = Partition::from_sets(vec![vec![0, 1, 2], vec![]], dist.probs());
        let seeds = SeedSet {
            seeds: vec![0, 2],
            repair_reserve: vec![],
        };
        let s = seed(&p, &h, &seeds, &dist).unwrap();
        assert!(s.is_surjective());
        assert_eq!(s.set(1), &[2]);
        let change = (s.divergence(&h).unwrap() - p.divergence(&h).unwrap()).abs();
        assert!(change <= 0.02 + 1e-12);

        // seeds already in place
        let p = Partition::from_sets(vec![vec![0, 1], vec![2]], dist.probs());
        let s = seed(&p, &h, &seeds, &dist).unwrap();
        assert_eq!(s, p);
    }

    #[test]
    fn seeding_needs_one_seed_per_leaf() {
        let dist = load_distribution(&[0.6, 0.4], false).unwrap();
        let p = Partition::from_sets(vec![vec![0, 1], vec![]], dist.probs());
        let seeds = SeedSet {
            seeds: vec![1],
            repair_reserve: vec![],
        };
        assert!(matches!(
            seed(&p, &hv(&[1, 1]), &seeds, &dist),
            Err(TppError::InsufficientSmallItems {
                needed: 2,
                available: 1
            })
        ));
    }

    #[test]
    fn seed_selection() {
        let small = vec![3, 4, 5, 6, 7, 8];
        let s = SeedSet::select(&small, 2, 3).unwrap();
        assert_eq!(s.seeds, vec![8, 7]);
        assert_eq!(s.repair_reserve, vec![6, 5, 4]);
        assert!(matches!(
            SeedSet::select(&small, 4, 3),
            Err(TppError::InsufficientSmallItems {
                needed: 7,
                available: 6
            })
        ));
    }

    #[test]
    fn repair_depth_one_example() {
        // R = 1, ε = 0.5: d = 1, T_L = 4, θ = 0.125
        let mut raw = vec![0.3, 0.2];
        raw.extend([0.1; 5]);
        let dist = load_distribution(&raw, false).unwrap();
        let inst = ProblemInstance::new(dist, 1.0, 0.5).unwrap();
        assert_eq!((inst.depth, inst.subtree_leaves()), (1, 4));
        let h = hv(&[1, 1]);
        let p = Partition::from_sets(vec![vec![0, 2, 3], vec![1, 4, 5, 6]], inst.dist.probs());
        let reserve = vec![6, 5, 4, 3];
        let (rp, rh) = repair(&p, &h, &reserve, &inst).unwrap();
        assert_eq!(rh.depths(), &[1, 3, 3, 3, 3]);
        assert_eq!(rh.rate(), 2.0);
        assert_eq!(rp.len(), h.len() - 1 + 4);
        assert!(rp.is_surjective());
        let before = p.divergence(&h).unwrap();
        assert!(rp.divergence(&rh).unwrap() <= before + 4.0 * 0.5 + 1e-12);
    }

    #[test]
    fn repair_subtree_rate_identity() {
        // T_L·2^{-(d+k)}·(d+k) = 2^{-d}(d+k) ≥ ε·k = R when 2^{-d} = ε
        for (rate, eps) in [(1.0, 0.5), (1.5, 0.25), (2.0, 0.25), (1.0, 0.125)] {
            let k = crate::distribution::subtree_log2(rate, eps).unwrap();
            let d = crate::distribution::truncation_depth(eps).unwrap();
            let t_l = 2f64.powi(k as i32);
            let contribution = t_l * 2f64.powi(-((d + k) as i32)) * (d + k) as f64;
            assert_eq!(contribution, 2f64.powi(-(d as i32)) * (d + k) as f64);
            assert!(contribution >= eps * k as f64);
            assert!(eps * k as f64 >= rate - 1e-12);
        }
    }

    #[test]
    fn repair_errors() {
        let mut raw = vec![0.3, 0.2];
        raw.extend([0.1; 5]);
        let inst = ProblemInstance::new(load_distribution(&raw, false).unwrap(), 1.0, 0.5).unwrap();
        let p = Partition::from_sets(vec![(0..7).collect()], inst.dist.probs());
        assert!(matches!(
            repair(&p, &HeightVector::root(), &[6, 5, 4, 3], &inst),
            Err(TppError::NoLeafAtDepth { depth: 1 })
        ));
        let p = Partition::from_sets(vec![vec![0, 2, 3], vec![1, 4, 5, 6]], inst.dist.probs());
        assert!(matches!(
            repair(&p, &hv(&[1, 1]), &[6, 5], &inst),
            Err(TppError::InsufficientSmallItems { needed: 4, .. })
        ));
        assert!(matches!(
            repair(&p, &hv(&[1, 1]), &[6, 5, 4, 0], &inst),
            Err(TppError::NotSmall { token: 0 })
        ));
    }
}
