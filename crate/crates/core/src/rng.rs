//! Portable random streams.
//!
//! Every stream is a ChaCha8 generator keyed by a SplitMix64 hash of the root
//! seed and a path of integers (for example `[sample, role, image, token]`).
//! Uniforms take the top 53 bits of `next_u64`; normals use the cosine branch
//! of Box-Muller. Each step is simple enough to reproduce bit-exactly in
//! another language.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a root seed and a path into one 64-bit value.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |h, &p| splitmix64(h ^ p))
}

/// Independent stream for `(seed, path)`. The 32-byte ChaCha key is four
/// successive SplitMix64 outputs, little-endian.
pub fn stream(seed: u64, path: &[u64]) -> Stream {
    let mut h = derive(seed, path);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        h = splitmix64(h);
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Uniform in `[0, 1)`.
pub fn uniform(rng: &mut Stream) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn standard_normal(rng: &mut Stream) -> f64 {
    let u1 = 1.0 - uniform(rng); // (0, 1]
    let u2 = uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn gaussian_vector(rng: &mut Stream, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| standard_normal(rng)).collect()
}

/// Uniform direction on the unit sphere.
pub fn unit_vector(rng: &mut Stream, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vector(rng, dim);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}
