//! Named deterministic RNG sub-streams.
//!
//! All randomness in a run flows from one master seed. Each component draws
//! from its own named stream so that, for example, regenerating the TCL fleet
//! does not perturb the load or tuner draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Derive a 32-byte seed for a named sub-stream of `master`.
pub fn stream_seed(master: u64, name: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.finalize().into()
}

/// RNG for the named sub-stream of `master`.
pub fn stream_rng(master: u64, name: &str) -> ChaCha12Rng {
    ChaCha12Rng::from_seed(stream_seed(master, name))
}
