//! Deterministic seed derivation and portable samplers.
//!
//! Every random draw in the crate flows from a `ChaCha8Rng` whose 32-byte seed
//! is derived from `(base seed, domain string, index)`, so corpora, parameter
//! initialization, and batch schedules are reproducible bit-for-bit and
//! independent work units (per-sample, per-tensor) can be reordered freely
//! without changing their streams.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 31;
    x
}

/// Derive a 32-byte RNG seed from `(seed, domain, index)`.
pub fn derive_seed(seed: u64, domain: &str, index: u64) -> [u8; 32] {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &b in domain.as_bytes() {
        h = mix64(h ^ u64::from(b));
    }
    h = mix64(h ^ index);
    let mut out = [0u8; 32];
    for (k, chunk) in out.chunks_exact_mut(8).enumerate() {
        let w = mix64(h.wrapping_add(k as u64 + 1));
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    out
}

/// ChaCha8 stream for `(seed, domain, index)`.
pub fn rng_for(seed: u64, domain: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(seed, domain, index))
}

/// Standard normal draw via Box-Muller (keeps the dependency set small and
/// the stream portable).
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
