//! Seeded randomness.
//!
//! Every random draw in the crate goes through ChaCha8 seeded from a `u64`
//! via `SeedableRng::seed_from_u64`, which is specified independently of
//! platform and word size. Streams are consumed sequentially only.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StudyRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> StudyRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent seed for a named sub-stream.
pub fn derive(seed: u64, stream: &str) -> u64 {
    // FNV-1a over the stream name, mixed into the seed with splitmix64.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
