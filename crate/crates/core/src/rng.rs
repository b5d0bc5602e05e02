//! Deterministic RNG streams.
//!
//! Every random decision in a run draws from a ChaCha8 stream keyed by
//! `(global seed, purpose, generation, slot)`, so results never depend on
//! which worker thread evaluates an individual.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags that keep the streams for different uses disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    InitialGenome = 1,
    Training = 2,
    Variation = 3,
    Terrain = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, purpose: Purpose, generation: u64, slot: u64) -> Rng {
    let mut h = splitmix64(seed);
    for word in [purpose as u64, generation, slot] {
        h = splitmix64(h ^ word);
    }
    ChaCha8Rng::seed_from_u64(h)
}
