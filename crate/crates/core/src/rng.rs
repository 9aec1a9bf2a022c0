//! Seeded, named random streams.
//!
//! A single root seed fans out to independent sub-streams identified by
//! name (and optionally an index), so changing the draw count of one stage
//! does not perturb the draws of any other.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fans a root seed out into named, independent generator streams.
#[derive(Debug, Clone, Copy)]
pub struct SeedFan {
    root: u64,
}

impl SeedFan {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// A reproducible stream for the given stage name.
    pub fn stream(&self, name: &str) -> ChaCha8Rng {
        self.stream_indexed(name, 0)
    }

    /// A reproducible stream for the given stage name and index
    /// (per-trajectory or per-replication streams).
    pub fn stream_indexed(&self, name: &str, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root);
        rng.set_stream(fnv1a(name) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        rng
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
