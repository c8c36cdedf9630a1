//! Seed derivation for independent, order-free random streams.
//!
//! Every consumer of randomness (model init, per-epoch selection, per-instance
//! dropping and masking) gets its own stream derived from the experiment seed,
//! so results do not depend on iteration or batch order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream tags keep derived seeds for different consumers apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    ModelInit = 1,
    Selection = 2,
    Drop = 3,
    Mask = 4,
    Synthetic = 5,
    TestSet = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the id bytes; stable across platforms and releases.
pub fn hash_id(id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn derive_seed(seed: u64, stream: Stream, parts: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(stream as u64));
    for p in parts {
        h = splitmix64(h ^ *p);
    }
    h
}

pub fn stream_rng(seed: u64, stream: Stream, parts: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, stream, parts))
}

pub fn seeded(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}
