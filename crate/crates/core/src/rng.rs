//! Seeded random streams.
//!
//! Every random quantity is addressed by `(seed, stream, index)`: the stream
//! usually identifies a Monte Carlo path and the index a prime. Each address gets
//! its own Xoshiro256++ generator, so extending a path to more primes never
//! changes the draws already made.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

pub type Generator = Xoshiro256PlusPlus;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSeed {
    pub seed: u64,
    pub stream: u64,
}

impl StreamSeed {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Generator for sub-stream `index` of this stream.
    pub fn substream(&self, index: u64) -> Generator {
        let mut h = splitmix64(self.seed);
        h = splitmix64(h ^ self.stream);
        h = splitmix64(h ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        Generator::seed_from_u64(h)
    }

    /// The same seed with a different stream number.
    pub fn with_stream(&self, stream: u64) -> Self {
        Self { seed: self.seed, stream }
    }
}
