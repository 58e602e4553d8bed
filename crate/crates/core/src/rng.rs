//! Counter-based random substreams.
//!
//! Every random quantity is drawn from a ChaCha8 stream keyed by a path of
//! indices below the master seed (replication, statistic, iteration, ...).
//! Results therefore do not depend on how work is scheduled across threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    key: [u8; 32],
}

impl StreamKey {
    pub fn from_seed(master: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&master.to_le_bytes());
        // Domain tag so that seed 0 does not map to the all-zero key.
        key[8..16].copy_from_slice(&0x5eed_c0de_u64.to_le_bytes());
        Self { key }
    }

    /// Key of the `index`-th child stream. ChaCha keyed by `self` and run on
    /// stream `index` acts as the derivation function.
    pub fn child(&self, index: u64) -> Self {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(index);
        let mut key = [0u8; 32];
        rng.fill_bytes(&mut key);
        Self { key }
    }

    pub fn path(&self, indices: &[u64]) -> Self {
        indices.iter().fold(*self, |k, &i| k.child(i))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.key)
    }
}
