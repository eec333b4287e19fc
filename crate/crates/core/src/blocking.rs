//! Aggregation of tiny tokens into blocks.
//!
//! Tokens with `p >= ε²` stay as individual heavy units. The rest are consumed
//! in non-increasing order and packed into blocks, each closed as soon as its
//! mass reaches `ε²`. Since every tiny token is below `ε²`, a closed block
//! lies in `[ε², 2ε²)`. Whatever is left at the end forms one residual block.

use serde::Serialize;

use crate::assignment_dp::AtomicAssignment;
use crate::distribution::TokenDistribution;
use crate::error::{Result, TppError};
use crate::tree::Partition;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Heavy,
    Block,
    Residual,
}

/// A heavy token, a block of tiny tokens, or the residual block.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AtomicUnit {
    pub kind: UnitKind,
    /// Sorted-distribution positions.
    pub members: Vec<usize>,
    pub mass: f64,
}

pub fn build_atomic_units(dist: &TokenDistribution, epsilon: f64) -> Vec<AtomicUnit> {
    let floor = epsilon * epsilon;
    let probs = dist.probs();
    let mut units = Vec::new();
    let mut open: Vec<usize> = Vec::new();
    let mut open_mass = 0.0;

    for (i, &p) in probs.iter().enumerate() {
        if p >= floor {
            units.push(AtomicUnit {
                kind: UnitKind::Heavy,
                members: vec![i],
                mass: p,
            });
            continue;
        }
        open.push(i);
        open_mass += p;
        if open_mass >= floor {
            units.push(AtomicUnit {
                kind: UnitKind::Block,
                members: std::mem::take(&mut open),
                mass: open_mass,
            });
            open_mass = 0.0;
        }
    }
    if !open.is_empty() {
        units.push(AtomicUnit {
            kind: UnitKind::Residual,
            members: open,
            mass: open_mass,
        });
    }
    units
}

/// Expands a unit-level assignment into a token-level partition.
pub fn unpack(
    assignment: &AtomicAssignment,
    units: &[AtomicUnit],
    dist: &TokenDistribution,
) -> Result<Partition> {
    if assignment.leaf_of.len() != units.len() {
        return Err(TppError::LengthMismatch {
            expected: units.len(),
            found: assignment.leaf_of.len(),
        });
    }
    let leaves = assignment.leaves;
    let mut sets = vec![Vec::new(); leaves];
    for (unit, &leaf) in units.iter().zip(&assignment.leaf_of) {
        if leaf >= leaves {
            return Err(TppError::LeafOutOfRange { leaf, leaves });
        }
        sets[leaf].extend_from_slice(&unit.members);
    }
    for set in &mut sets {
        set.sort_unstable();
    }
    Ok(Partition::from_sets(sets, dist.probs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::load_distribution;
    use proptest::prelude::*;

    const REFERENCE: [f64; 8] = [0.30, 0.20, 0.15, 0.12, 0.10, 0.06, 0.05, 0.02];

    #[test]
    fn reference_blocking_replay() {
        let dist = load_distribution(&REFERENCE, false).unwrap();
        let units = build_atomic_units(&dist, 0.5);
        let shape: Vec<(UnitKind, Vec<usize>)> =
            units.iter().map(|u| (u.kind, u.members.clone())).collect();
        assert_eq!(
            shape,
            vec![
                (UnitKind::Heavy, vec![0]),
                (UnitKind::Block, vec![1, 2]),
                (UnitKind::Block, vec![3, 4, 5]),
                (UnitKind::Residual, vec![6, 7]),
            ]
        );
        let masses: Vec<f64> = units.iter().map(|u| u.mass).collect();
        for (m, want) in masses.iter().zip([0.30, 0.35, 0.28, 0.07]) {
            assert!((m - want).abs() < 1e-12);
        }
    }

    #[test]
    fn all_heavy_and_single_token() {
        let dist = load_distribution(&[0.4, 0.3, 0.3], false).unwrap();
        let units = build_atomic_units(&dist, 0.5);
        assert_eq!(units.len(), 3);
        assert!(units.iter().all(|u| u.kind == UnitKind::Heavy));

        let dist = load_distribution(&[1.0], false).unwrap();
        let units = build_atomic_units(&dist, 0.1);
        assert_eq!(units.len(), 1);
        assert_eq!(units[0].kind, UnitKind::Heavy);
    }

    #[test]
    fn exact_fill_leaves_no_residual() {
        let dist = load_distribution(&[0.5, 0.125, 0.125, 0.125, 0.125], false).unwrap();
        let units = build_atomic_units(&dist, 0.5);
        let kinds: Vec<UnitKind> = units.iter().map(|u| u.kind).collect();
        assert_eq!(
            kinds,
            vec![UnitKind::Heavy, UnitKind::Block, UnitKind::Block]
        );
    }

    #[test]
    fn unpack_examples() {
        let dist = load_distribution(&REFERENCE, false).unwrap();
        let units = build_atomic_units(&dist, 0.5);

        let a = AtomicAssignment {
            leaf_of: vec![0, 1, 2, 2],
            leaves: 3,
        };
        let p = unpack(&a, &units, &dist).unwrap();
        for (m, want) in p.masses().iter().zip([0.30, 0.35, 0.35]) {
            assert!((m - want).abs() < 1e-12);
        }
        assert_eq!(p.set(2), &[3, 4, 5, 6, 7]);

        let a = AtomicAssignment {
            leaf_of: vec![0, 0, 0, 0],
            leaves: 2,
        };
        let p = unpack(&a, &units, &dist).unwrap();
        assert_eq!(p.set(0).len(), 8);
        assert!(p.set(1).is_empty());
        assert!(!p.is_surjective());

        let a = AtomicAssignment {
            leaf_of: vec![0, 1, 2, 3],
            leaves: 4,
        };
        let p = unpack(&a, &units, &dist).unwrap();
        let sets: Vec<Vec<usize>> = units.iter().map(|u| u.members.clone()).collect();
        assert_eq!(p.sets(), sets.as_slice());

        let bad = AtomicAssignment {
            leaf_of: vec![0, 1, 2, 7],
            leaves: 4,
        };
        assert!(matches!(
            unpack(&bad, &units, &dist),
            Err(TppError::LeafOutOfRange { .. })
        ));
    }

    proptest! {
        #[test]
        fn block_bounds_hold(raw in prop::collection::vec(0.0f64..1.0, 1..300),
                             eps in prop::sample::select(vec![0.1, 0.25, 0.5]),
                             skew in 0.0f64..4.0) {
            let skewed: Vec<f64> = raw.iter().map(|p| p.powf(1.0 + skew)).collect();
            prop_assume!(skewed.iter().any(|&p| p > 0.0));
            let dist = load_distribution(&skewed, true).unwrap();
            let units = build_atomic_units(&dist, eps);
            let floor = eps * eps;
            let mut residuals = 0;
            let mut covered: Vec<usize> = Vec::new();
            for u in &units {
                let recomputed = dist.mass_of(&u.members);
                prop_assert!((recomputed - u.mass).abs() <= 1e-12);
                match u.kind {
                    UnitKind::Heavy => {
                        prop_assert_eq!(u.members.len(), 1);
                        prop_assert!(u.mass >= floor);
                    }
                    UnitKind::Block => prop_assert!(u.mass >= floor && u.mass < 2.0 * floor),
                    UnitKind::Residual => {
                        residuals += 1;
                        prop_assert!(u.mass < floor);
                    }
                }
                covered.extend(&u.members);
            }
            prop_assert!(residuals <= 1);
            prop_assert!(units.len() as f64 <= (1.0 / floor).ceil() + 1.0);
            covered.sort_unstable();
            prop_assert_eq!(covered, (0..dist.len()).collect::<Vec<_>>());
            let total: f64 = units.iter().map(|u| u.mass).sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
        }
    }
}
