//! Seed derivation and the dither PRNG.
//!
//! All randomness comes from ChaCha8 (`rand_chacha` 0.3) seeded through
//! `SeedableRng::seed_from_u64`. Child seeds are derived from a parent seed
//! and a stream number with the SplitMix64 finalizer, so every file, side and
//! model gets an independent stream that does not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type DitherRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(seed ^ splitmix64(stream))`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

/// FNV-1a hash of a purpose label, used as a stream number.
pub fn stream_of(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn derive_labeled(seed: u64, label: &str) -> u64 {
    derive_seed(seed, stream_of(label))
}

pub fn rng_from_seed(seed: u64) -> DitherRng {
    ChaCha8Rng::seed_from_u64(seed)
}
