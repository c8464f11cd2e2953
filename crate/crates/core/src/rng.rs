//! Seeded counter RNG: every consumer gets a ChaCha stream addressed by
//! (seed, stream id), so per-measurement draws are reproducible across runs
//! and platforms and independent of evaluation order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// RNG for stream `stream` of the generator family `seed`.
pub fn chacha_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// splitmix64 finalizer; decorrelates consecutive integers.
fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a sub-seed from a base seed and two content words (for example a
/// rounded epoch and a satellite tag), stable across platforms.
pub fn derive(seed: u64, a: u64, b: u64) -> u64 {
    splitmix(seed ^ splitmix(a ^ splitmix(b)))
}

/// Stable 64-bit tag for a string label (first 8 bytes of its SHA-256).
pub fn label_tag(label: &str) -> u64 {
    let digest = Sha256::digest(label.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}
