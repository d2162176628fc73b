use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Generator scoped to one query and one purpose, so draws do not depend on
/// the order (or thread) in which queries are processed.
pub fn query_rng(seed: u64, query_id: &str, purpose: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    h.update(query_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}
