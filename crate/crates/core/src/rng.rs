//! Seeded, named random streams. Every random draw in the crate flows from one
//! root seed; each consumer asks for its own stream by name so adding a new
//! consumer never perturbs existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        SeedTree { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child tree for a named sub-component.
    pub fn child(&self, name: &str) -> SeedTree {
        let digest = self.digest(name);
        SeedTree {
            seed: u64::from_le_bytes(digest[..8].try_into().unwrap()),
        }
    }

    /// Independent generator for `name`.
    pub fn stream(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.digest(name))
    }

    fn digest(&self, name: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.finalize().into()
    }
}
