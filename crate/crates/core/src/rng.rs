//! Counter-based seeding.
//!
//! Every random quantity in a run is keyed by `(seed, index, stream)`, so the
//! value drawn for sample `j` never depends on how many samples were drawn
//! before it or on which worker thread drew it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep independent draws for the same index apart.
pub mod stream {
    pub const PROFILE: u64 = 0x7072_6f66;
    pub const GROUPING: u64 = 0x6772_6f75;
    pub const MANIPULATION: u64 = 0x6d61_6e69;
    pub const GA: u64 = 0x6761_6761;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit sub-seed from a run seed, a sample counter and a stream tag.
pub fn sub_seed(seed: u64, index: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ index) ^ stream)
}

/// A ChaCha generator positioned for `(seed, index, stream)`.
pub fn keyed_rng(seed: u64, index: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, index, stream))
}
