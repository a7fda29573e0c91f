//! Engagement prediction for social posts over a temporal hashtag
//! co-occurrence graph.

pub mod baselines;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod ingest;
pub mod netstats;
pub mod nn;
pub mod pipeline;
pub mod postgraph;
pub mod synth;

pub use error::{Error, Result};

/// Deterministic child seed for a named stage or run, so that every random
/// stream flows from one master seed.
pub fn sub_seed(master: u64, name: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let digest = Sha256::new()
        .chain_update(master.to_le_bytes())
        .chain_update(name.as_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest"))
}
