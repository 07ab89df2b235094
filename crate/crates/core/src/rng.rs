//! Seed derivation. Every random draw in the crate flows from a single master
//! seed; per-component seeds are derived deterministically from (master, label)
//! so that reordering unrelated components never perturbs a stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive a child seed from a master seed and a component label.
///
/// FNV-1a over the label folded into the master seed, then finalized with a
/// splitmix64 round. Stable across platforms and releases.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ master;
    for byte in label.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded RNG for a named component.
pub fn component_rng(master: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_stable() {
        assert_eq!(derive_seed(7, "split"), derive_seed(7, "split"));
        assert_ne!(derive_seed(7, "split"), derive_seed(8, "split"));
        assert_ne!(derive_seed(7, "split"), derive_seed(7, "model"));
    }

    #[test]
    fn rng_streams_are_reproducible() {
        let a: Vec<f64> = component_rng(42, "x").sample_iter(rand::distributions::Standard).take(8).collect();
        let b: Vec<f64> = component_rng(42, "x").sample_iter(rand::distributions::Standard).take(8).collect();
        assert_eq!(a, b);
    }
}
