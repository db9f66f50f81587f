//! Seed derivation and stream splitting.
//!
//! All randomness flows from ChaCha8, a counter-based generator whose output
//! is fixed across platforms. A seed is derived from
//! `(base_seed, replicate, method, purpose)` by chaining SplitMix64
//! finalizers, so adding a method or a purpose never shifts the draws of
//! another. Independent substreams of one seed use ChaCha's 64-bit stream id.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for. The discriminant is part of the hash.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    InputNoise = 1,
    OutputNoise = 2,
    InitialFit = 3,
    PenalizedFit = 4,
    ComboMatrix = 5,
    InitialCondition = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over a label, used to fold method names into seeds.
pub fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Mix a sequence of words into one seed.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6A09_E667_F3BC_C908u64, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Seed for replicate `replicate`, method `method`, purpose `purpose`.
pub fn derive_seed(base_seed: u64, replicate: u64, method: &str, purpose: Purpose) -> u64 {
    mix(&[base_seed, replicate, label_hash(method), purpose as u64])
}

/// Generator for `seed`, substream `stream`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
