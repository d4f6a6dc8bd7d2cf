//! Seeded random streams. Every source of randomness in the artifact is a
//! named substream of one base seed, so runs are reproducible end to end.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG type used throughout the crate. Its full state is
/// serializable, which checkpoint resume relies on.
pub type SeedRng = ChaCha8Rng;

/// FNV-1a, used only to map substream names onto ChaCha stream ids.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1_0000_0000_01b3);
    }
    h
}

/// An independent stream derived from the base seed and a stable name.
pub fn substream(seed: u64, name: &str) -> SeedRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

/// A standard-normal draw. Sampling is always done in f64 so the draw
/// sequence does not depend on model precision.
pub fn normal_f64(rng: &mut SeedRng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

/// Fills a row-major `rows x cols` buffer with unit-Gaussian noise.
pub fn normal_matrix(rng: &mut SeedRng, rows: usize, cols: usize) -> ndarray::Array2<f64> {
    ndarray::Array2::from_shape_fn((rows, cols), |_| normal_f64(rng))
}
