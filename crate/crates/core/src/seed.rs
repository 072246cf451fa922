//! Counter-based seed derivation.
//!
//! Every random stream in a campaign is keyed by a tuple of integers rather
//! than by the order in which work happens to be scheduled, so results do not
//! depend on the worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a parent seed with a list of counters into a child seed.
pub fn derive(parent: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(parent), |acc, &k| splitmix64(acc ^ splitmix64(k.wrapping_add(GOLDEN))))
}

pub fn rng_for(parent: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(parent, keys))
}

/// Stream tags keep the different consumers of a master seed apart.
pub mod tag {
    pub const EVALUATION: u64 = 1;
    pub const SAMPLE: u64 = 2;
    pub const ACQUISITION: u64 = 3;
    pub const HYPER: u64 = 4;
}
