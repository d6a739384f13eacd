pub mod analysis;
pub mod dataset;
pub mod dom;
pub mod evaluation;
pub mod exec;
pub mod fixture;
pub mod generation;
pub mod llm;
pub mod pipeline;
pub mod synthesis;
pub mod xpath;

use sha2::{Digest, Sha256};

/// Derives an independent RNG seed for `label` from the run seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}
