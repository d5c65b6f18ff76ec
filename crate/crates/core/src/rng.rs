//! Per-replicate random streams.
//!
//! Each replicate draws from ChaCha20 keyed by the master seed (its 8
//! little-endian bytes followed by 24 zero bytes) with the stream id set to
//! the replicate index. Streams for different indices are disjoint, so a
//! replicate's draws depend only on `(master_seed, index)`, never on
//! scheduling. The scheme is part of the output contract and must not change.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn replicate_rng(master_seed: u64, index: u64) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    let mut rng = ChaCha20Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
