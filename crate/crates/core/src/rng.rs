//! Random streams.
//!
//! Every stochastic operation takes an explicit `&mut SimRng`. The generator is
//! xoshiro256++ seeded through SplitMix64 (`seed_from_u64`), so a `u64` seed
//! fully determines every draw on every platform. Independent sub-streams are
//! obtained with the xoshiro jump function (2^128 steps apart).

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type SimRng = Xoshiro256PlusPlus;

/// Root stream for `seed`.
pub fn stream(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// The `index`-th non-overlapping sub-stream of `seed`.
pub fn substream(seed: u64, index: u64) -> SimRng {
    let mut rng = stream(seed);
    for _ in 0..index {
        rng.jump();
    }
    rng
}
