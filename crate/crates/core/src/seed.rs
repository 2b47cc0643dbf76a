//! Independent random streams derived from a run seed.
//!
//! Every consumer of randomness (split, init, shuffling, dropout,
//! permutation importance) draws from its own stream keyed on
//! `(seed, purpose, indices...)`, so changing how much one subsystem draws
//! never shifts another's numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Split,
    Init,
    Shuffle,
    Dropout,
    Permutation,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Split => 0x5350_4c49_5400_0001,
            Purpose::Init => 0x494e_4954_0000_0002,
            Purpose::Shuffle => 0x5348_5546_0000_0003,
            Purpose::Dropout => 0x4452_4f50_0000_0004,
            Purpose::Permutation => 0x5045_524d_0000_0005,
        }
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed, a purpose and any number of indices into one 64-bit seed.
pub fn derive(seed: u64, purpose: Purpose, indices: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ purpose.tag());
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i));
    }
    h
}

pub fn stream(seed: u64, purpose: Purpose, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, purpose, indices))
}
