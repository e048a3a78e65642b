//! Seeded, stream-separated randomness.
//!
//! Every random draw in the crate goes through an [`Rng`] identified by a
//! `(seed, stream)` pair. Streams are derived, never shared: two consumers
//! that need independent draws ask for different stream ids, and a consumer
//! that needs one sequence per epoch or trial forks by index.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Well-known stream ids. Paired runs share the clean-data streams and never
/// touch the canary stream from the baseline arm.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const CANARY: u64 = 3;
    pub const MONTE_CARLO: u64 = 4;
    pub const INIT: u64 = 5;
    pub const REFERENCE: u64 = 6;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rng {
    pub seed: u64,
    pub stream: u64,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// A child stream keyed on `index` (epoch, trial, ...).
    pub fn fork(&self, index: u64) -> Self {
        Self { seed: splitmix64(self.seed ^ splitmix64(self.stream.wrapping_add(0x51ed_27a3))), stream: index }
    }

    /// A sibling stream with a different id under the same seed.
    pub fn with_stream(&self, stream: u64) -> Self {
        Self { seed: self.seed, stream }
    }

    pub fn generator(&self) -> ChaCha12Rng {
        let mut g = ChaCha12Rng::seed_from_u64(self.seed);
        g.set_stream(self.stream);
        g
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
