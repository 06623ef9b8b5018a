//! Seeded random streams.
//!
//! Every stochastic stage takes an explicit generator. Independent streams
//! (one per query, per seed, per stage) come from ChaCha's 64-bit stream
//! selector, so splitting work never perturbs another stage's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for `(seed, stream)`; distinct streams are independent.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stage tags mixed into stream ids so stages never share a stream.
pub mod tag {
    pub const DATA: u64 = 1 << 40;
    pub const SUBSAMPLE: u64 = 2 << 40;
    pub const LOGGING: u64 = 3 << 40;
    pub const CLICKS: u64 = 4 << 40;
    pub const RANDOMIZE: u64 = 5 << 40;
    pub const INIT: u64 = 6 << 40;
    pub const TRAIN: u64 = 7 << 40;
    pub const BASELINE: u64 = 8 << 40;
}
