//! Deterministic stream derivation.
//!
//! Every random draw in the crate flows from a root seed through
//! `derive(root, &[tag, index, ...])`. Streams depend only on the root and
//! the derivation path, never on execution order, so parallel schedules
//! reproduce serial results bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 step; the usual finalizer-quality 64-bit mixer.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes the root seed with a derivation path into a single stream seed.
pub fn derive(root: u64, path: &[u64]) -> u64 {
    let mut state = root;
    let mut out = splitmix64(&mut state);
    for &part in path {
        state ^= part.wrapping_mul(0xff51_afd7_ed55_8ccd);
        out ^= splitmix64(&mut state);
    }
    out
}

/// A reproducible generator for the given derivation path.
pub fn stream(root: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_path_same_stream() {
        let mut a = stream(7, &[1, 2, 3]);
        let mut b = stream(7, &[1, 2, 3]);
        for _ in 0..32 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn different_paths_diverge() {
        let a = derive(7, &[1, 2, 3]);
        let b = derive(7, &[1, 2, 4]);
        let c = derive(7, &[1, 2]);
        let d = derive(8, &[1, 2, 3]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
