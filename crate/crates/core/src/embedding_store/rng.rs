//! Seeded, platform-independent randomness.
//!
//! Every random stream in the crate is a ChaCha8 generator
//! (`rand_chacha::ChaCha8Rng`) seeded with `seed_from_u64` and, where several
//! independent streams are needed, separated with `set_stream`. Gaussians use
//! the Box–Muller transform over 53-bit uniforms.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform in `[0, 1)` with 53 bits of precision.
#[inline]
pub fn uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal via Box–Muller (one draw per call; the sine branch is discarded).
pub fn gaussian(rng: &mut impl RngCore) -> f64 {
    let u1 = 1.0 - uniform(rng); // (0, 1]
    let u2 = uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn gaussian_vec(rng: &mut impl RngCore, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * gaussian(rng)).collect()
}
