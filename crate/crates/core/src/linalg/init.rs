use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Matrix;

/// I.i.d. `N(mean, std^2)` entries.
pub fn init_normal(rows: usize, cols: usize, mean: f64, std: f64, seed: u64) -> Matrix {
    assert!(std >= 0.0 && std.is_finite(), "std must be finite and >= 0");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(mean, std).expect("valid normal parameters");
    let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

/// Uniform on `[-a, a]` with `a = gain * sqrt(6 / (fan_in + fan_out))`,
/// taking `fan_in = cols` and `fan_out = rows`.
pub fn init_xavier(rows: usize, cols: usize, gain: f64, seed: u64) -> Matrix {
    assert!(rows > 0 && cols > 0, "xavier init needs a non-empty shape");
    let bound = gain.abs() * (6.0 / (rows + cols) as f64).sqrt();
    if bound == 0.0 {
        return Matrix::zeros(rows, cols);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

/// Derives a per-tensor seed from a run seed and a tensor name.
pub fn seed_for(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, mixed with the run seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
