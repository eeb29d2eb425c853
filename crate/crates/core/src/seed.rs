//! Seed derivation. Every generator takes a `u64` seed; sub-streams are
//! derived by mixing the parent seed with a tag and indices so that results
//! never depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn tag_hash(tag: &str) -> u64 {
    // FNV-1a
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derives an independent child seed from `(parent, tag, path)`.
pub fn derive(parent: u64, tag: &str, path: &[u64]) -> u64 {
    let mut h = splitmix(parent ^ tag_hash(tag));
    for &p in path {
        h = splitmix(h ^ splitmix(p));
    }
    h
}

pub fn rng(seed: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child_rng(parent: u64, tag: &str, path: &[u64]) -> LabRng {
    rng(derive(parent, tag, path))
}
