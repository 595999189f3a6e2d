//! Seeded random streams.
//!
//! Every random decision in a run draws from a ChaCha8 generator keyed by the
//! run seed and a stream id. The stream id packs a purpose tag in the upper
//! 32 bits and an index (split number, round, ...) in the lower 32, so that
//! independent consumers never share a stream and results do not depend on
//! thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const TAG_SPLIT: u32 = 1;
pub const TAG_SEED_LABELS: u32 = 2;
pub const TAG_ORACLE: u32 = 3;
pub const TAG_SAMPLER: u32 = 4;
pub const TAG_LEARNER: u32 = 5;
pub const TAG_SYNTHETIC: u32 = 6;
pub const TAG_COMPANION: u32 = 7;
pub const TAG_RUN: u32 = 8;

pub fn stream_rng(seed: u64, tag: u32, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((tag as u64) << 32) | (index & 0xffff_ffff));
    rng
}

/// A child seed for an independent sub-run, e.g. one split of an experiment.
pub fn derive_seed(seed: u64, tag: u32, index: u64) -> u64 {
    stream_rng(seed, tag, index).random::<u64>()
}

/// Fisher–Yates shuffle drawing `u64` indices, so the permutation is stable
/// across platforms.
pub fn shuffle<T, R: Rng + ?Sized>(rng: &mut R, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i as u64) as usize;
        items.swap(i, j);
    }
}

/// Uniform sample of `k` distinct positions from `0..n` (partial shuffle),
/// returned in draw order.
pub fn sample_positions<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    let k = k.min(n);
    for i in 0..k {
        let j = rng.random_range(i as u64..n as u64) as usize;
        all.swap(i, j);
    }
    all.truncate(k);
    all
}
