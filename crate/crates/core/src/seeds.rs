//! Deterministic seed derivation.
//!
//! Every stochastic component in the crate draws from a [`rand_chacha::ChaCha8Rng`]
//! seeded through [`mix`], so a run is a pure function of its configured base
//! seed regardless of thread count or iteration order.

/// Fold `salts` into `base` with a splitmix64-style avalanche per word.
///
/// The same `(base, salts)` always yields the same seed; distinct salt
/// sequences yield uncorrelated streams for all practical purposes.
pub fn mix(base: u64, salts: &[u64]) -> u64 {
    let mut acc = splitmix64(base ^ 0x6A09_E667_F3BC_C909);
    for &s in salts {
        acc = splitmix64(acc ^ s.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    }
    acc
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
