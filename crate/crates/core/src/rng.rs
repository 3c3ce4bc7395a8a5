//! Named, independent random substreams.
//!
//! Every consumer of randomness gets its own ChaCha8 generator keyed by the
//! run seed, a source tag and up to two indices, so adding draws to one
//! source (or measuring more cycles) never shifts another source's stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Sources of randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Source {
    Arrivals = 1,
    Services = 2,
    Switchovers = 3,
    Binomial = 4,
    OptimizerStarts = 5,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 256-bit key from `(seed, source, a, b)`.
pub fn key(seed: u64, source: Source, a: u64, b: u64) -> [u8; 32] {
    let mut out = [0u8; 32];
    let mut h = splitmix(seed);
    for (i, word) in [source as u64, a, b, 0x5EED].into_iter().enumerate() {
        h = splitmix(h ^ word);
        out[i * 8..(i + 1) * 8].copy_from_slice(&h.to_le_bytes());
    }
    out
}

pub fn substream(seed: u64, source: Source, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(key(seed, source, a, b))
}
