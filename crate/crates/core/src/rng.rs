//! Named random substreams derived from a single run seed.
//!
//! Every stage that needs randomness asks for `substream(seed, "stage-name")`
//! so stages never share state and adding a stage never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn substream(seed: u64, name: &str) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

/// Substream for the `index`-th independent draw of a stage.
pub fn indexed_substream(seed: u64, name: &str, index: u64) -> StreamRng {
    substream(seed, &format!("{name}/{index}"))
}
