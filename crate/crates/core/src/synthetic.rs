//! Seeded synthetic distributions for benchmarks and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distribution::{load_distribution, TokenDistribution};
use crate::error::{Result, TppError};

/// Zipf law `p_i ∝ i^{-s}` over `n` tokens.
pub fn zipf(n: usize, s: f64) -> Result<TokenDistribution> {
    check(n, s)?;
    let raw: Vec<f64> = (1..=n).map(|i| (i as f64).powf(-s)).collect();
    load_distribution(&raw, true)
}

/// Zipf weights each scaled by an independent factor in `[1 - jitter, 1 + jitter]`.
pub fn jittered_zipf(n: usize, s: f64, jitter: f64, seed: u64) -> Result<TokenDistribution> {
    check(n, s)?;
    if !(0.0..1.0).contains(&jitter) {
        return Err(TppError::InvalidParameter(format!(
            "jitter must lie in [0, 1), got {jitter}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (1..=n)
        .map(|i| (i as f64).powf(-s) * (1.0 + jitter * rng.random_range(-1.0..=1.0)))
        .collect();
    load_distribution(&raw, true)
}

/// Uniformly random weights, normalized.
pub fn random_simplex(n: usize, seed: u64) -> Result<TokenDistribution> {
    check(n, 0.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    load_distribution(&raw, true)
}

fn check(n: usize, s: f64) -> Result<()> {
    if n == 0 {
        return Err(TppError::EmptyDistribution);
    }
    if !s.is_finite() || s < 0.0 {
        return Err(TppError::InvalidParameter(format!(
            "zipf exponent must be finite and >= 0, got {s}"
        )));
    }
    Ok(())
}
