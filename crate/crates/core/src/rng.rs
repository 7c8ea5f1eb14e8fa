//! Seeding conventions.
//!
//! Every stochastic operation takes an explicit `u64` seed. Parallel work
//! derives one independent child seed per task with [`derive_seed`], so the
//! result of a batch never depends on scheduling order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Deterministic RNG used throughout the crate.
pub type SeedRng = ChaCha12Rng;

pub fn rng_from_seed(seed: u64) -> SeedRng {
    SeedRng::seed_from_u64(seed)
}

/// splitmix64 finalizer; full-period bijection on u64.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for task `index` under `parent`. Distinct indices give
/// statistically independent streams; the map is stable across runs.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index.wrapping_add(0x51ed_270b)))
}
