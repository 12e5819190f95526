use std::ops::Range;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::PointCloud;
use crate::error::{Error, Result};

/// The generator used everywhere a seed appears in the public API.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes `seed` with a stream tag into an independent 64-bit seed (SplitMix64).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for row `row` of the virtual cloud identified by `seed`.
///
/// ChaCha streams make row `i` addressable without drawing rows `0..i`, so a
/// large population can be sampled piecewise and any row range reproduced.
pub fn row_rng(seed: u64, row: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row);
    rng
}

/// `n` draws from N(mean, diag(diag_cov)), deterministic in `seed`.
pub fn sample_gaussian(mean: &[f64], diag_cov: &[f64], n: usize, seed: u64) -> Result<PointCloud> {
    sample_gaussian_rows(mean, diag_cov, 0..n, seed)
}

/// Rows `rows` of the same virtual sample that [`sample_gaussian`] draws from.
/// `sample_gaussian(.., n, seed)` equals `sample_gaussian_rows(.., 0..n, seed)`.
pub fn sample_gaussian_rows(
    mean: &[f64],
    diag_cov: &[f64],
    rows: Range<usize>,
    seed: u64,
) -> Result<PointCloud> {
    if mean.len() != diag_cov.len() {
        return Err(Error::DimensionMismatch {
            expected: mean.len(),
            got: diag_cov.len(),
        });
    }
    if rows.is_empty() {
        return Err(Error::DimensionTooSmall {
            what: "sample size",
            got: 0,
            min: 1,
        });
    }
    if let Some((index, &value)) = diag_cov
        .iter()
        .enumerate()
        .find(|(_, v)| **v < 0.0 || !v.is_finite())
    {
        return Err(Error::NegativeVariance { index, value });
    }
    let sd: Vec<f64> = diag_cov.iter().map(|v| v.sqrt()).collect();
    let d = mean.len();
    let mut data = Array2::zeros((rows.len(), d));
    for (out, row) in data.rows_mut().into_iter().zip(rows) {
        let mut rng = row_rng(seed, row as u64);
        for ((x, &m), &s) in out.into_iter().zip(mean).zip(&sd) {
            let z: f64 = rng.sample(StandardNormal);
            *x = m + s * z;
        }
    }
    PointCloud::new(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{s, Axis};

    #[test]
    fn zero_variance_rows_equal_mean() {
        let x = sample_gaussian(&[1.5, -2.0, 0.0], &[0.0; 3], 50, 9).unwrap();
        for row in x.view().rows() {
            assert_eq!(row.to_vec(), vec![1.5, -2.0, 0.0]);
        }
    }

    #[test]
    fn deterministic_and_row_addressable() {
        let a = sample_gaussian(&[0.0; 4], &[1.0; 4], 100, 5).unwrap();
        let b = sample_gaussian(&[0.0; 4], &[1.0; 4], 100, 5).unwrap();
        assert_eq!(a, b);
        let tail = sample_gaussian_rows(&[0.0; 4], &[1.0; 4], 60..100, 5).unwrap();
        assert_eq!(a.view().slice(s![60.., ..]), tail.view());
        let other = sample_gaussian(&[0.0; 4], &[1.0; 4], 100, 6).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn large_sample_variance_matches_target() {
        let target = [10.0, 6.0, 4.0, 1.0];
        let x = sample_gaussian(&[0.0; 4], &target, 200_000, 3).unwrap();
        let var = x.view().var_axis(Axis(0), 1.0);
        for (v, t) in var.iter().zip(target) {
            assert!((v - t).abs() / t < 0.03, "variance {v} vs {t}");
        }
    }

    #[test]
    fn negative_variance_rejected() {
        assert!(matches!(
            sample_gaussian(&[0.0, 0.0], &[1.0, -0.1], 3, 0),
            Err(Error::NegativeVariance { index: 1, .. })
        ));
        assert!(sample_gaussian(&[0.0], &[1.0], 0, 0).is_err());
    }
}
