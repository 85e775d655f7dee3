//! Named seed derivation. Every random stream in the crate is obtained from a
//! single top-level seed plus a component name and index, so runs never touch
//! ambient entropy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `(base, component, index)`.
pub fn derive_seed(base: u64, component: &str, index: u64) -> u64 {
    // FNV-1a over the component name
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in component.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(splitmix64(base ^ h).wrapping_add(index))
}

pub fn rng_for(base: u64, component: &str, index: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, component, index))
}
