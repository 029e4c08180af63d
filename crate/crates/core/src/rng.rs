//! Seed derivation.
//!
//! Every random stream in the crate comes from one root seed. A stream is
//! addressed by a path of integer tags (for example `[TAG_TRAIN, epoch,
//! batch, sample]`) and its seed is obtained by folding the tags into the
//! root with the SplitMix64 finalizer:
//!
//! ```text
//! s0 = mix(root)
//! s_{i+1} = mix(s_i ^ mix(tag_i + 0x9E3779B97F4A7C15 * (i + 1)))
//! ```
//!
//! The result seeds a ChaCha8 generator. Streams are independent of the
//! order in which they are requested, so parallel evaluation reproduces
//! sequential evaluation exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

pub const TAG_INIT: u64 = 1;
pub const TAG_SHUFFLE: u64 = 2;
pub const TAG_TRAIN: u64 = 3;
pub const TAG_EVAL: u64 = 4;
pub const TAG_SPLIT: u64 = 5;
pub const TAG_SYNTHETIC: u64 = 6;
pub const TAG_GRADCHECK: u64 = 7;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    tags.iter().enumerate().fold(mix(root), |acc, (i, &t)| {
        mix(acc ^ mix(t.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 1))))
    })
}

pub fn stream(root: u64, tags: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(root, tags))
}
