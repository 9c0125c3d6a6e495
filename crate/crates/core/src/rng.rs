//! Seed expansion.
//!
//! Every random draw in a simulation comes from a ChaCha8 stream whose
//! 256-bit key is the little-endian concatenation of
//! `(master_seed, replicate, purpose tag, index)`. The map is injective, so
//! distinct (replicate, purpose, index) triples never share a stream and a
//! replicate can be executed on any thread without changing its draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Concrete generator used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// What a stream is used for. The discriminant is part of the stream key and
/// must never be renumbered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Topology = 1,
    ClusterLabels = 2,
    GroundTruth = 3,
    ClientData = 4,
    Schedule = 5,
    PrivacyNoise = 6,
    TestData = 7,
    SampleSizes = 8,
}

/// Counter-based splitter rooted at a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn replicate(&self, replicate: u64) -> ReplicateSeeds {
        ReplicateSeeds {
            master: self.master,
            replicate,
        }
    }
}

/// Streams belonging to one Monte Carlo replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicateSeeds {
    master: u64,
    replicate: u64,
}

impl ReplicateSeeds {
    pub fn replicate(&self) -> u64 {
        self.replicate
    }

    pub fn stream(&self, purpose: Purpose, index: u64) -> SimRng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.master.to_le_bytes());
        key[8..16].copy_from_slice(&self.replicate.to_le_bytes());
        key[16..24].copy_from_slice(&(purpose as u64).to_le_bytes());
        key[24..32].copy_from_slice(&index.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}
