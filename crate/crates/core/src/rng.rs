//! Seed derivation for independent, schedule-free random streams.
//!
//! Each client owns one stream per round and purpose, keyed by
//! `(seed, client_id, round, purpose)`. Draw order inside one stream is fixed
//! by the code that owns it, so running clients concurrently cannot change
//! any value.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// What a stream is used for; part of the derivation key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    DpNoise = 1,
    Attack = 2,
    Split = 3,
    Partition = 4,
    Subset = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the key words into one 64-bit seed.
pub fn derive_seed(seed: u64, client_id: u64, round: u64, purpose: Purpose) -> u64 {
    let mut h = splitmix64(seed);
    for word in [purpose as u64, client_id, round] {
        h = splitmix64(h ^ word);
    }
    h
}

pub fn stream(seed: u64, client_id: usize, round: usize, purpose: Purpose) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, client_id as u64, round as u64, purpose))
}

/// Stream for data-preparation steps that are not tied to a client or round.
pub fn data_stream(seed: u64, purpose: Purpose) -> Stream {
    stream(seed, usize::MAX, 0, purpose)
}
