//! Reachability DP that assigns atomic units to the leaves of a fixed tree.
//!
//! Unit masses are floored onto the lattice `δ·ℤ` with `δ = ε³/2`. A DP state
//! is the vector of rounded loads `(a_1, …, a_{L-1})` on all leaves but the
//! last; the last leaf implicitly carries `W - Σ a_j`. Placing unit `t` on leaf
//! `j < L` adds its weight to coordinate `j`, placing it on leaf `L` leaves
//! the state unchanged.
//!
//! Only reachable states are stored. Each layer is a sorted, deduplicated
//! vector of states packed into a `u128` with radix `W + 1`, most significant
//! digit first, so numeric order on packed states is lexicographic order on
//! load vectors. Loads never exceed `W`, so adding a weight never carries
//! into the neighbouring digit.

use serde::Serialize;

use crate::blocking::AtomicUnit;
use crate::error::{Result, TppError};
use crate::tree::{dyadic, HeightVector};

/// Default cap on the number of states in one DP layer.
pub const DEFAULT_STATE_CAP: usize = 50_000_000;

/// Rounded objectives closer than this are treated as equal.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Unit masses floored to multiples of `delta`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscretizedInstance {
    pub delta: f64,
    /// `w_u = ⌊q_u / δ⌋`.
    pub weights: Vec<u64>,
    /// `W = Σ w_u`.
    pub total: u64,
    /// Exact unit masses `q_u`, aligned with `weights`.
    pub masses: Vec<f64>,
}

// q/δ is computed in floating point; a mass that sits on the lattice can come
// out a few ulps below the integer (0.3 / 0.001 = 299.99999999999994).
const LATTICE_SLACK: f64 = 1e-9;

fn floor_to_lattice(mass: f64, delta: f64) -> u64 {
    (mass / delta + LATTICE_SLACK).floor().max(0.0) as u64
}

pub fn discretize(units: &[AtomicUnit], epsilon: f64) -> DiscretizedInstance {
    let delta = epsilon.powi(3) / 2.0;
    DiscretizedInstance::from_masses(units.iter().map(|u| u.mass).collect(), delta)
}

impl DiscretizedInstance {
    pub fn from_masses(masses: Vec<f64>, delta: f64) -> Self {
        let weights: Vec<u64> = masses.iter().map(|&q| floor_to_lattice(q, delta)).collect();
        let total = weights.iter().sum();
        DiscretizedInstance {
            delta,
            weights,
            total,
            masses,
        }
    }

    /// Number of atomic units `K`.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `Σ_u (q_u - δ·w_u)`, the total mass lost to rounding.
    pub fn rounding_loss(&self) -> f64 {
        self.masses
            .iter()
            .zip(&self.weights)
            .map(|(&q, &w)| q - self.delta * w as f64)
            .sum()
    }
}

/// Leaf index (0-based) for every atomic unit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AtomicAssignment {
    pub leaf_of: Vec<usize>,
    pub leaves: usize,
}

impl AtomicAssignment {
    /// Exact leaf masses `m_j = Σ_{u ∈ A_j} q_u`.
    pub fn leaf_masses(&self, masses: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.leaves];
        for (&leaf, &q) in self.leaf_of.iter().zip(masses) {
            out[leaf] += q;
        }
        out
    }

    /// Rounded loads on every leaf, last leaf included.
    pub fn leaf_loads(&self, weights: &[u64]) -> Vec<u64> {
        let mut out = vec![0; self.leaves];
        for (&leaf, &w) in self.leaf_of.iter().zip(weights) {
            out[leaf] += w;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DpOutcome {
    pub assignment: AtomicAssignment,
    /// Loads `(a_1, …, a_{L-1})` of the selected terminal state.
    pub terminal_state: Vec<u64>,
    pub rounded_objective: f64,
    /// Frontier size after each unit, starting with the initial state.
    pub frontier_sizes: Vec<usize>,
}

impl DpOutcome {
    pub fn frontier_max(&self) -> usize {
        self.frontier_sizes.iter().copied().max().unwrap_or(0)
    }

    /// Frontier sizes as `step,frontier_size` CSV lines with a header.
    pub fn frontier_csv(&self) -> String {
        let mut out = String::from("step,frontier_size\n");
        for (step, size) in self.frontier_sizes.iter().enumerate() {
            out.push_str(&format!("{step},{size}\n"));
        }
        out
    }
}

/// `Σ_{j<L} |2^{-h_j} - δ a_j| + |2^{-h_L} - δ(W - Σ a_j)|`.
pub fn rounded_objective(delta: f64, total: u64, h: &HeightVector, state: &[u64]) -> f64 {
    let last = h.len() - 1;
    debug_assert_eq!(state.len(), last);
    let assigned: u64 = state.iter().sum();
    let head: f64 = state
        .iter()
        .enumerate()
        .map(|(j, &a)| (h.target(j) - delta * a as f64).abs())
        .sum();
    head + (h.target(last) - delta * total.saturating_sub(assigned) as f64).abs()
}

/// `Σ_j |2^{-h_j} - m_j|` for the exact masses of an assignment.
pub fn true_objective(assignment: &AtomicAssignment, masses: &[f64], h: &HeightVector) -> f64 {
    assignment
        .leaf_masses(masses)
        .iter()
        .enumerate()
        .map(|(j, &m)| (dyadic(h.depth(j)) - m).abs())
        .sum()
}

struct Lattice {
    /// `pow[j]` is the place value of coordinate `j`.
    pow: Vec<u128>,
    radix: u128,
}

impl Lattice {
    fn new(total: u64, coords: usize) -> Option<Self> {
        let radix = total as u128 + 1;
        radix.checked_pow(coords as u32)?;
        let mut pow = vec![1u128; coords];
        for j in (0..coords.saturating_sub(1)).rev() {
            pow[j] = pow[j + 1] * radix;
        }
        Some(Lattice { pow, radix })
    }

    fn digit(&self, state: u128, j: usize) -> u64 {
        ((state / self.pow[j]) % self.radix) as u64
    }

    fn unpack(&self, state: u128) -> Vec<u64> {
        (0..self.pow.len()).map(|j| self.digit(state, j)).collect()
    }
}

/// Minimizes the rounded objective over all reachable terminal states.
///
/// Terminal values within `TIE_TOLERANCE` count as ties and go to the
/// lexicographically largest state, i.e. more mass on the earlier, larger
/// targets. The assignment
/// is rebuilt backwards, placing each unit on the smallest leaf index whose
/// predecessor state is reachable; zero-weight units go to the last leaf.
pub fn run_dp(disc: &DiscretizedInstance, h: &HeightVector, state_cap: usize) -> Result<DpOutcome> {
    let leaves = h.len();
    let units = disc.len();
    let epsilon = (2.0 * disc.delta).cbrt();
    if leaves == 1 {
        return Ok(DpOutcome {
            assignment: AtomicAssignment {
                leaf_of: vec![0; units],
                leaves,
            },
            terminal_state: Vec::new(),
            rounded_objective: (1.0 - disc.delta * disc.total as f64).abs(),
            frontier_sizes: vec![1; units + 1],
        });
    }

    let coords = leaves - 1;
    let lattice = Lattice::new(disc.total, coords).ok_or_else(|| TppError::ResourceLimit {
        epsilon,
        heights: h.depths().to_vec(),
        detail: format!(
            "lattice ({} + 1)^{coords} does not fit a packed state",
            disc.total
        ),
    })?;

    let mut layers: Vec<Vec<u128>> = Vec::with_capacity(units + 1);
    layers.push(vec![0]);
    for &w in &disc.weights {
        let prev = layers.last().unwrap();
        let next = if w == 0 {
            prev.clone()
        } else {
            let step = w as u128;
            let mut next = Vec::with_capacity(prev.len() * leaves);
            for &s in prev {
                next.push(s);
                next.extend(lattice.pow.iter().map(|&p| s + step * p));
            }
            next.sort_unstable();
            next.dedup();
            next
        };
        if next.len() > state_cap {
            return Err(TppError::ResourceLimit {
                epsilon,
                heights: h.depths().to_vec(),
                detail: format!(
                    "DP frontier reached {} states (cap {state_cap})",
                    next.len()
                ),
            });
        }
        layers.push(next);
    }

    let terminal_layer = layers.last().unwrap();
    let values: Vec<f64> = terminal_layer
        .iter()
        .map(|&s| rounded_objective(disc.delta, disc.total, h, &lattice.unpack(s)))
        .collect();
    let floor = values.iter().copied().fold(f64::INFINITY, f64::min);
    // layers are sorted ascending, so the last tie is lexicographically largest
    let pick = values
        .iter()
        .rposition(|&v| v <= floor + TIE_TOLERANCE)
        .expect("the initial state is always reachable");
    let (rounded, terminal) = (values[pick], terminal_layer[pick]);

    let last = leaves - 1;
    let mut leaf_of = vec![last; units];
    let mut state = terminal;
    for t in (0..units).rev() {
        let w = disc.weights[t];
        if w == 0 {
            continue;
        }
        let prev = &layers[t];
        let step = w as u128;
        let mut placed = None;
        for j in 0..coords {
            if lattice.digit(state, j) >= w
                && prev.binary_search(&(state - step * lattice.pow[j])).is_ok()
            {
                placed = Some(j);
                break;
            }
        }
        match placed {
            Some(j) => {
                leaf_of[t] = j;
                state -= step * lattice.pow[j];
            }
            None => debug_assert!(prev.binary_search(&state).is_ok()),
        }
    }
    debug_assert_eq!(state, 0);

    let assignment = AtomicAssignment { leaf_of, leaves };
    debug_assert!(
        (true_objective(&assignment, &disc.masses, h) - rounded).abs()
            <= disc.rounding_loss() + 1e-12
    );

    Ok(DpOutcome {
        assignment,
        terminal_state: lattice.unpack(terminal),
        rounded_objective: rounded,
        frontier_sizes: layers.iter().map(Vec::len).collect(),
    })
}
