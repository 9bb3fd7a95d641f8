//! Deterministic substream construction for reproducible experiments.
//!
//! Every random draw in an experiment comes from a [`ChaCha8Rng`] keyed by a
//! `(seed, lane, step)` coordinate. ChaCha acts as a pseudorandom function of
//! its 256-bit key, so distinct coordinates yield independent streams:
//! backends cannot perturb each other's randomness, and any single run or
//! step can be reproduced in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Lane reserved for ground-truth simulation.
pub const LANE_SIMULATION: u64 = 0;

/// Lane for the filter step of backend `b` (zero-based position in the
/// configured filter list).
pub fn lane_filter(b: usize) -> u64 {
    1 + 2 * b as u64
}

/// Lane for the posterior-view draws of backend `b` (used by the SIR
/// equal-weight resampling view).
pub fn lane_view(b: usize) -> u64 {
    2 + 2 * b as u64
}

/// Derives an independent ChaCha8 stream from `(seed, lane, step)`.
///
/// The three words are placed verbatim into the 256-bit ChaCha key (little
/// endian, fourth word zero), so equal tuples give identical streams and any
/// differing word gives an unrelated one.
pub fn substream(seed: u64, lane: u64, step: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&lane.to_le_bytes());
    key[16..24].copy_from_slice(&step.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn identical_coordinates_reproduce() {
        let a: Vec<f64> = substream(7, 3, 11).random_iter().take(8).collect();
        let b: Vec<f64> = substream(7, 3, 11).random_iter().take(8).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_coordinates_decorrelate() {
        let a: f64 = substream(7, 3, 11).random();
        let b: f64 = substream(7, 3, 12).random();
        let c: f64 = substream(7, 4, 11).random();
        let d: f64 = substream(8, 3, 11).random();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
