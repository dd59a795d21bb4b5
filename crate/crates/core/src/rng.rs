use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A ChaCha8 key plus a 64-bit stream selector.
///
/// Distinct streams under one seed are independent sequences, so replicate
/// `r` of an experiment can draw from `seed.stream(r)` on any thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    pub stream: u64,
}

impl RngSeed {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    pub fn stream(self, stream: u64) -> Self {
        Self { stream, ..self }
    }

    /// Two-level stream id, e.g. (grid cell, replicate).
    pub fn substream(self, major: u32, minor: u32) -> Self {
        self.stream((u64::from(major) << 32) | u64::from(minor))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

impl From<u64> for RngSeed {
    fn from(seed: u64) -> Self {
        Self::new(seed)
    }
}
