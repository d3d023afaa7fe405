//! Seed derivation. Every stochastic step draws from a `ChaCha8Rng` whose seed
//! is a pure function of the experiment seed and the step's coordinates, so
//! results never depend on which thread ran which client.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one stream identified by `(seed, stream, a, b)`.
pub fn derive_seed(seed: u64, stream: Stream, a: u64, b: u64) -> u64 {
    let mut h = mix(seed ^ 0x6665_646C_656E_7321);
    h = mix(h ^ stream as u64);
    h = mix(h ^ a);
    mix(h ^ b.rotate_left(32))
}

/// Shuffle seed for client `client` in round `round`.
pub fn client_round_seed(seed: u64, client: usize, round: usize) -> u64 {
    derive_seed(seed, Stream::LocalTraining, client as u64, round as u64)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent purposes that need their own random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    LocalTraining = 2,
    Data = 3,
    EvalSubset = 4,
    Probe = 5,
    Pretrain = 6,
    Finetune = 7,
}
