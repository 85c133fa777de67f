//! Counter-based seed derivation.
//!
//! Every random stream is keyed by `(master, point, trial, stream)`:
//!
//! ```text
//! s0 = splitmix64(master)
//! s1 = splitmix64(s0 ^ point)
//! s2 = splitmix64(s1 ^ trial)
//! seed = splitmix64(s2 ^ stream)
//! ```
//!
//! and seeds a `ChaCha8Rng`. Results therefore do not depend on thread
//! count or scheduling. With common random numbers the sweep passes
//! `point = 0` for every grid point.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Beam alignment passages of a grid point.
pub const STREAM_ALIGN: u64 = 1;
/// Training passages of a trial.
pub const STREAM_TRAIN: u64 = 2;
/// Test passages of a trial.
pub const STREAM_TEST: u64 = 3;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(master: u64, point: u64, trial: u64, stream: u64) -> u64 {
    let s = splitmix64(master);
    let s = splitmix64(s ^ point);
    let s = splitmix64(s ^ trial);
    splitmix64(s ^ stream)
}

pub fn rng(master: u64, point: u64, trial: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, point, trial, stream))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::collections::HashSet;

    #[test]
    fn splitmix_reference_values() {
        // first outputs of the reference generator seeded with 0
        assert_eq!(splitmix64(0), 0xe220_a839_7b1d_cdaf);
        assert_eq!(splitmix64(0x9e37_79b9_7f4a_7c15), 0x6e78_9e6a_a1b9_65f4);
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let mut seen = HashSet::new();
        for p in 0..20 {
            for t in 0..50 {
                for s in [STREAM_ALIGN, STREAM_TRAIN, STREAM_TEST] {
                    assert!(seen.insert(derive(42, p, t, s)));
                }
            }
        }
        assert_ne!(derive(1, 0, 0, 1), derive(2, 0, 0, 1));
    }

    #[test]
    fn streams_replay() {
        let a: Vec<u64> = (0..5).map(|_| rng(9, 1, 2, STREAM_TEST).random()).collect();
        let mut r = rng(9, 1, 2, STREAM_TEST);
        let first: u64 = r.random();
        assert!(a.iter().all(|&x| x == first));
    }
}
