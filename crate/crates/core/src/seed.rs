//! Seed derivation.
//!
//! Every random stream in the crate is keyed by a master seed plus a short
//! path of indices (tree, feature, replication, ...). Streams are derived up
//! front so results never depend on the order in which parallel workers run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// One round of the SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a child seed from `master` and an index path.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &i| splitmix64(acc ^ splitmix64(i)))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags so that e.g. tree 3's bootstrap and tree 3's split draws
/// never share a seed.
pub(crate) mod stream {
    pub const BOOTSTRAP: u64 = 1;
    pub const GROW: u64 = 2;
    pub const MDA: u64 = 3;
    pub const SIM_DATA: u64 = 4;
    pub const SIM_FOREST: u64 = 5;
    pub const SIM_MDA: u64 = 6;
    pub const EXPECTATION: u64 = 7;
    pub const SHUFFLE: u64 = 8;
}
