//! Seed derivation for reproducible, order-independent random streams.
//!
//! Every stochastic operation in the pipeline draws from its own ChaCha8
//! stream whose seed is derived from `(master_seed, index, tag)` with a
//! splitmix-style 64-bit mixer. Deriving rather than sharing streams is what
//! makes instance generation order-independent: instance `i` produces the
//! same bytes whether it is generated first, last, or on another thread.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Labels the independent random streams hanging off one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamTag {
    ServerProfiles = 1,
    AttackedSet = 2,
    Background = 3,
    AttackProfile = 4,
    RampJitter = 5,
    Split = 6,
    ModelInit = 7,
    BatchShuffle = 8,
    Forest = 9,
    GradCheck = 10,
}

/// splitmix64 finalizer. Full-period mixing of a 64-bit word.
fn mix(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The per-index base seed all of an instance's streams branch from.
pub fn instance_seed(master: u64, index: u64) -> u64 {
    mix(master ^ mix(index))
}

/// Derives the seed for stream `tag` at position `index` under `master`.
///
/// The derivation is `mix(mix(master ^ mix(index)) ^ tag)`, fixed as part of
/// the dataset format: changing it changes every generated byte.
pub fn derive_seed(master: u64, index: u64, tag: StreamTag) -> u64 {
    mix(instance_seed(master, index) ^ tag as u64)
}

/// A ChaCha8 stream seeded by [`derive_seed`].
pub fn stream(master: u64, index: u64, tag: StreamTag) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, index, tag))
}
