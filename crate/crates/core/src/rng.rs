//! Seeded random streams.
//!
//! Every random draw in the crate comes from `ChaCha8Rng`. A stream is
//! identified by `(seed, stream)`: the generator is created with
//! `ChaCha8Rng::seed_from_u64(seed)` and then switched to the 64-bit stream
//! number with `set_stream`. Independent consumers use distinct stream
//! numbers so that adding draws in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags used across the crate.
pub mod streams {
    pub const SYNTH: u64 = 1;
    pub const LABEL_BUDGET: u64 = 2;
    pub const INIT: u64 = 3;
    pub const PROBE_SUBSET: u64 = 4;
    pub const PROBE_FOLDS: u64 = 5;
    /// Per-epoch training streams are `EPOCH_BASE + epoch`.
    pub const EPOCH_BASE: u64 = 1 << 32;
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
