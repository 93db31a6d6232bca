//! Deterministic random substreams.
//!
//! Every stream is keyed by the master seed, a purpose tag and up to two
//! indices (replication, client or chain), so results do not depend on the
//! order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Purpose tags for substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Population = 1,
    Data = 2,
    Multiplier = 3,
    GaChain = 4,
    Fclt = 5,
    ClientGa = 6,
    Detector = 7,
    WarmStart = 8,
    Evaluation = 9,
    Misc = 10,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a list of words into a new 64-bit seed.
pub fn derive_seed(seed: u64, words: &[u64]) -> u64 {
    let mut h = splitmix64(seed);
    for &w in words {
        h = splitmix64(h ^ splitmix64(w.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

/// Substream for `(seed, tag, a, b)`.
pub fn substream(seed: u64, tag: Stream, a: u64, b: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, &[tag as u64, a, b]))
}
