use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Matrix;

/// Deterministic generator used everywhere in the crate.
pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a seed with a tag and an index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Matrix with i.i.d. `N(0, scale^2)` entries drawn from `rng`.
pub fn gaussian_matrix_with<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    scale: f64,
) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_raw(rows, cols, data)
}

/// Matrix with i.i.d. `N(0, scale^2)` entries; identical for identical seeds.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64, scale: f64) -> Matrix {
    assert!(
        rows >= 1 && cols >= 1,
        "gaussian_matrix needs a non-empty shape"
    );
    gaussian_matrix_with(&mut rng_from_seed(seed), rows, cols, scale)
}

/// A uniformly distributed point on the unit sphere in `dim` dimensions.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_fixed_seed() {
        assert_eq!(gaussian_matrix(2, 2, 7, 1.0), gaussian_matrix(2, 2, 7, 1.0));
        assert_ne!(gaussian_matrix(2, 2, 7, 1.0), gaussian_matrix(2, 2, 8, 1.0));
    }

    #[test]
    fn moments_of_a_million_draws() {
        let m = gaussian_matrix(1000, 1000, 11, 1.0);
        let n = m.len() as f64;
        let mean = m.sum() / n;
        let var = m.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // 3 sigma / sqrt(n) = 3e-3 < 5e-3; chi-square sd of the variance is sqrt(2/n) ~ 1.4e-3.
        assert!(mean.abs() < 5e-3, "mean {mean}");
        assert!((0.99..=1.01).contains(&var), "variance {var}");
    }

    #[test]
    fn streams_differ() {
        let a: f64 = rng_stream(1, 0).sample(StandardNormal);
        let b: f64 = rng_stream(1, 1).sample(StandardNormal);
        assert_ne!(a, b);
    }
}
