//! Counter-based random substreams.
//!
//! Every random draw in an experiment comes from a ChaCha8 stream selected by
//! the master seed plus a key of (purpose, indices). Work units can therefore
//! be scheduled on any number of threads, in any order, and still see exactly
//! the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a substream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Channel = 1,
    PilotNoise = 2,
    PilotDither = 3,
    DataSymbols = 4,
    DataNoise = 5,
    Payload = 6,
    OfflineChannel = 7,
    OfflineNoise = 8,
    OfflineDither = 9,
    Test = 15,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Derives a child tree, e.g. for an offline-training run nested in a sweep.
    pub fn child(&self, tag: u64) -> SeedTree {
        SeedTree::new(splitmix64(self.master ^ splitmix64(tag)))
    }

    /// Opens the substream for `purpose` at the given indices (trial, session, ...).
    pub fn stream(&self, purpose: Purpose, indices: &[u64]) -> ChaCha8Rng {
        let mut id = splitmix64(purpose as u64);
        for &ix in indices {
            id = splitmix64(id ^ ix);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(id);
        rng
    }
}
