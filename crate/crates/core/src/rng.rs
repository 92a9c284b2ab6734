//! Named, reproducible random substreams.
//!
//! A master seed fans out into independent ChaCha8 streams keyed by a purpose
//! label and a block index. Adding a new consumer with a new label never
//! perturbs the draws seen by existing consumers, and parallel blocks each own
//! their stream, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream {
    master: u64,
}

impl SeedStream {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    fn key(&self, purpose: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.master.to_le_bytes());
        h.update((purpose.len() as u64).to_le_bytes());
        h.update(purpose.as_bytes());
        let out = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&out);
        key
    }

    /// Generator for `(purpose, index)`.
    pub fn rng(&self, purpose: &str, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key(purpose));
        rng.set_stream(index);
        rng
    }

    /// A derived stream whose own substreams are disjoint from the parent's.
    pub fn child(&self, purpose: &str) -> SeedStream {
        let key = self.key(purpose);
        let mut m = [0u8; 8];
        m.copy_from_slice(&key[..8]);
        SeedStream::new(u64::from_le_bytes(m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_label_same_draws() {
        let s = SeedStream::new(42);
        let a: Vec<u64> = s.rng("x", 3).random_iter().take(4).collect();
        let b: Vec<u64> = s.rng("x", 3).random_iter().take(4).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn labels_and_indices_separate_streams() {
        let s = SeedStream::new(42);
        let a: u64 = s.rng("x", 0).random();
        let b: u64 = s.rng("y", 0).random();
        let c: u64 = s.rng("x", 1).random();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(s.child("x").master(), s.child("y").master());
    }
}
