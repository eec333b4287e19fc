//! Approximating a categorical distribution by the leaf distribution of a full
//! binary tree.
//!
//! Given token probabilities `p`, a rate floor `R` and an accuracy `ε`, the
//! solver picks leaf depths `h` (a Kraft-tight height vector) and a partition
//! of the tokens into one non-empty set per leaf, so that the encoding rate
//! `Σ 2^{-h_j} h_j` is at least `R` and the unhalved total variation
//! `Σ |2^{-h_j} - Pr(S_j)|` is within `12ε` of optimal.
//!
//! ```
//! use tpp_core::{load_distribution, solve, verify, ProblemInstance};
//!
//! let dist = load_distribution(&[0.35, 0.25, 0.1, 0.1, 0.08, 0.05, 0.04, 0.03], false)?;
//! let inst = ProblemInstance::new(dist, 1.0, 0.5)?;
//! let sol = solve(&inst)?;
//! assert!(sol.rate >= 1.0);
//! assert!(verify(&sol, &inst).all_passed());
//! # Ok::<(), tpp_core::TppError>(())
//! ```

pub mod assignment_dp;
pub mod blocking;
pub mod distribution;
pub mod error;
pub mod oracle;
pub mod solver;
pub mod stego;
pub mod synthetic;
pub mod transform;
pub mod tree;

pub use assignment_dp::{
    discretize, run_dp, AtomicAssignment, DiscretizedInstance, DpOutcome, DEFAULT_STATE_CAP,
};
pub use blocking::{build_atomic_units, unpack, AtomicUnit, UnitKind};
pub use distribution::{
    check_assumptions, classify, load_distribution, AssumptionReport, Classification,
    DistributionFile, ProblemInstance, TokenDistribution,
};
pub use error::{Result, TppError};
pub use oracle::{brute_force, OracleResult};
pub use solver::{
    solve, solve_with, verify, verify_record, Branch, Solution, SolutionRecord, SolveOptions,
    VerificationReport,
};
pub use stego::{bits_from_hex, bits_to_hex, build_codec, decode, encode, Codec};
pub use transform::{monotone_reorder, repair, seed, truncate, SeedSet};
pub use tree::{
    canonical_codes, divergence, enumerate_height_vectors, kraft_check, rate, HeightVector,
    Partition,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/quickstart.md")]
    struct Quickstart;
    #[doc = include_str!("../../../book/src/trees.md")]
    struct Trees;
    #[doc = include_str!("../../../book/src/solver.md")]
    struct Solver;
    #[doc = include_str!("../../../book/src/oracle.md")]
    struct Oracle;
    #[doc = include_str!("../../../book/src/stego.md")]
    struct Stego;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
