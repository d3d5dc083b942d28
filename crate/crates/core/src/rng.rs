//! Seed plumbing. Every random stream in the crate is a ChaCha8 generator whose
//! seed is derived from a base seed and a path of integer labels, so that
//! independent components never share or depend on each other's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `labels` into `seed`.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(splitmix(seed), |acc, &l| {
        splitmix(acc ^ splitmix(l.wrapping_add(0x51A3)))
    })
}

pub fn rng_for(seed: u64, labels: &[u64]) -> SimRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, labels))
}
