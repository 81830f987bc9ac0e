//! Seeded, splittable random streams.
//!
//! Every stochastic routine takes an explicit `&mut Rng`. Child streams are
//! derived with [`split`], so work fanned out to threads stays reproducible
//! as long as the children are created in a fixed order.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent child stream, advancing the parent.
pub fn split(rng: &mut Rng) -> Rng {
    ChaCha8Rng::from_seed(rng.gen())
}

/// `n` children, created in order.
pub fn split_n(rng: &mut Rng, n: usize) -> Vec<Rng> {
    (0..n).map(|_| split(rng)).collect()
}

/// Draw an index from a discrete distribution. Falls back to the last index
/// with positive mass when rounding leaves the cumulative sum short of `u`.
pub fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}
