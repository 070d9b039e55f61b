//! Deterministic, order-independent RNG derivation.
//!
//! Every random decision in the crate draws from a stream derived from the
//! run seed, a string tag naming the decision site, and an integer index.
//! Because each `(seed, tag, index)` triple yields an independent ChaCha8
//! stream, consumers can draw in any order — or skip sites entirely —
//! without perturbing each other, which is what makes whole-pipeline runs
//! byte-reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer: a cheap, well-mixed 64-bit permutation.
#[inline]
fn mix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent RNG stream for decision site `tag`, instance
/// `index`, under the run-level `seed`.
///
/// The tag is absorbed byte-by-byte through the splitmix64 permutation, so
/// distinct tags (including prefixes of each other) produce unrelated
/// streams.
pub fn derive(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    // Domain-separation constant keeps `derive(s, "", 0)` distinct from a
    // raw ChaCha seeded with `s`.
    let mut state = mix(seed ^ 0x6d61_6c73_6961_6d00);
    for &b in tag.as_bytes() {
        state = mix(state ^ u64::from(b));
    }
    state = mix(state ^ index);

    let mut key = [0u8; 32];
    let mut s = state;
    for chunk in key.chunks_exact_mut(8) {
        s = mix(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn first_words(rng: &mut ChaCha8Rng, n: usize) -> Vec<u64> {
        (0..n).map(|_| rng.gen::<u64>()).collect()
    }

    #[test]
    fn same_triple_same_stream() {
        let a = first_words(&mut derive(7, "corpus/family", 3), 8);
        let b = first_words(&mut derive(7, "corpus/family", 3), 8);
        assert_eq!(a, b);
    }

    #[test]
    fn different_components_give_different_streams() {
        let base = first_words(&mut derive(7, "corpus/family", 3), 4);
        assert_ne!(base, first_words(&mut derive(8, "corpus/family", 3), 4));
        assert_ne!(base, first_words(&mut derive(7, "corpus/sample", 3), 4));
        assert_ne!(base, first_words(&mut derive(7, "corpus/family", 4), 4));
    }

    #[test]
    fn tag_prefixes_do_not_collide() {
        // "ab" with index 0 must differ from "a" with any small index: the
        // byte absorption is order- and length-sensitive.
        let ab = first_words(&mut derive(1, "ab", 0), 4);
        for idx in 0..16 {
            assert_ne!(ab, first_words(&mut derive(1, "a", idx), 4));
        }
    }

    #[test]
    fn streams_look_uniform_enough_for_sanity() {
        // Not a statistical test, just a guard against a degenerate key
        // (e.g. all zeros) slipping through a refactor.
        let mut rng = derive(0, "sanity", 0);
        let draws: Vec<f64> = (0..1000).map(|_| rng.gen::<f64>()).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.5).abs() < 0.05, "mean {mean} far from 0.5");
    }
}
