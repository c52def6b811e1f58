//! Named random sub-streams derived from one root seed.
//!
//! Each stage draws from its own stream keyed by `(root, name, path)`, so the
//! number of draws made by one stage never shifts another stage's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StageRng = ChaCha8Rng;

pub const DATA: &str = "data";
pub const SUBSET: &str = "subset";
pub const BATCH: &str = "batch";
pub const POSITIVE: &str = "positive-choice";
pub const NEGATIVE: &str = "negative-choice";
pub const BOOTSTRAP: &str = "bootstrap-candidates";
pub const INIT_SCORER: &str = "init-scorer";
pub const INIT_RETRIEVER: &str = "init-retriever";
pub const LM_ORDER: &str = "lm-order";
pub const FIXED_EXAMPLES: &str = "fixed-examples";
pub const RANDOM_EXAMPLES: &str = "random-examples";

pub fn stream(root: u64, name: &str, path: &[u64]) -> StageRng {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update((name.len() as u64).to_le_bytes());
    h.update(name.as_bytes());
    for p in path {
        h.update(p.to_le_bytes());
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}
