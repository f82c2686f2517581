//! Deterministic derivation of independent random streams from one run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags, so that e.g. demand generation can never be perturbed by how
/// many random numbers a controller consumed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Arrivals = 1,
    Controller = 2,
    Exploration = 3,
    Replay = 4,
    Init = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream_rng(base: u64, stream: Stream, extra: &[u64]) -> SimRng {
    let mut tags = vec![stream as u64];
    tags.extend_from_slice(extra);
    SimRng::seed_from_u64(derive_seed(base, &tags))
}
