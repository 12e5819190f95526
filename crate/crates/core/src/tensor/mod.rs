//! Dense matrix primitives shared by every metric: point clouds, covariance
//! estimation, symmetric eigendecomposition, shrinkage and seeded sampling.

mod eigen;
mod sampling;

pub use eigen::{sym_eigen, sym_eigvals, EigenDecomposition, Spectrum};
pub use sampling::{derive_seed, row_rng, sample_gaussian, sample_gaussian_rows, seeded_rng};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when checking covariance symmetry.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// An N×d cloud of points, one point per row. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    data: Array2<f64>,
}

impl PointCloud {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if let Some(((row, col), _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteInput { row, col });
        }
        Ok(Self { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Array2::zeros((n, d));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                data[[i, j]] = v;
            }
        }
        Self::new(data)
    }

    /// Stacks several clouds of equal width into one (row-wise union).
    pub fn stack(parts: &[ArrayView2<'_, f64>]) -> Result<Self> {
        let data = ndarray::concatenate(Axis(0), parts).map_err(|_| {
            let expected = parts.first().map_or(0, |p| p.ncols());
            let got = parts
                .iter()
                .map(|p| p.ncols())
                .find(|&c| c != expected)
                .unwrap_or(expected);
            Error::DimensionMismatch { expected, got }
        })?;
        Self::new(data)
    }

    pub fn n_points(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    /// Checks the N ≥ 2, d ≥ 2 precondition of the metric operations.
    pub fn require_metric_shape(&self) -> Result<()> {
        if self.n_points() < 2 {
            return Err(Error::DimensionTooSmall {
                what: "point count",
                got: self.n_points(),
                min: 2,
            });
        }
        if self.dim() < 2 {
            return Err(Error::DimensionTooSmall {
                what: "dimension",
                got: self.dim(),
                min: 2,
            });
        }
        Ok(())
    }
}

/// Normalization used by [`covariance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Divide by N − 1.
    #[default]
    Unbiased,
    /// Divide by N.
    Population,
}

impl Estimator {
    fn denominator(self, n: usize) -> f64 {
        match self {
            Estimator::Unbiased => (n - 1) as f64,
            Estimator::Population => n as f64,
        }
    }
}

/// A symmetric d×d covariance matrix with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    values: Array2<f64>,
    sample_count: usize,
    estimator: Estimator,
}

impl CovMatrix {
    /// Wraps a square matrix, symmetrizing it. Fails if the input is not square,
    /// holds non-finite entries, or is asymmetric beyond [`SYMMETRY_TOLERANCE`].
    pub fn new(values: Array2<f64>, sample_count: usize, estimator: Estimator) -> Result<Self> {
        let d = values.nrows();
        if values.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: values.ncols(),
            });
        }
        if sample_count == 0 {
            return Err(Error::InvalidParameter(
                "covariance sample count must be positive".into(),
            ));
        }
        if let Some(((row, col), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteInput { row, col });
        }
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..d {
            for j in (i + 1)..d {
                if (values[[i, j]] - values[[j, i]]).abs() > SYMMETRY_TOLERANCE * scale.max(1e-300) {
                    return Err(Error::InvalidParameter(format!(
                        "covariance matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self::symmetrized(values, sample_count, estimator))
    }

    fn symmetrized(mut values: Array2<f64>, sample_count: usize, estimator: Estimator) -> Self {
        let d = values.nrows();
        for i in 0..d {
            for j in (i + 1)..d {
                let avg = 0.5 * (values[[i, j]] + values[[j, i]]);
                values[[i, j]] = avg;
                values[[j, i]] = avg;
            }
        }
        Self {
            values,
            sample_count,
            estimator,
        }
    }

    /// Diagonal covariance, e.g. a known population covariance.
    pub fn from_diagonal(diag: &[f64], sample_count: usize, estimator: Estimator) -> Result<Self> {
        if let Some((index, &value)) = diag.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(Error::NegativeVariance { index, value });
        }
        Self::new(
            Array2::from_diag(&Array1::from(diag.to_vec())),
            sample_count,
            estimator,
        )
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            values: Array2::zeros((d, d)),
            sample_count: 1,
            estimator: Estimator::Unbiased,
        }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            values: Array2::eye(d),
            sample_count: 1,
            estimator: Estimator::Population,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn estimator(&self) -> Estimator {
        self.estimator
    }

    pub fn trace(&self) -> f64 {
        self.values.diag().sum()
    }
}

/// Mean-centered covariance of the rows of `x`.
pub fn covariance(x: &PointCloud, estimator: Estimator) -> Result<CovMatrix> {
    let n = x.n_points();
    if n < 2 {
        return Err(Error::DimensionTooSmall {
            what: "point count",
            got: n,
            min: 2,
        });
    }
    let centered = centered(x.view());
    let gram = centered.t().dot(&centered) / estimator.denominator(n);
    Ok(CovMatrix::symmetrized(gram, n, estimator))
}

/// Rows of `x` minus their column means.
pub(crate) fn centered(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
    &x - &mean
}

/// Streaming covariance over row chunks, for clouds too large to hold at once.
///
/// Sums are taken about the mean of the first chunk, which keeps the
/// one-pass formula well conditioned for data far from the origin.
#[derive(Debug, Clone)]
pub struct CovAccumulator {
    shift: Option<Array1<f64>>,
    sum: Array1<f64>,
    outer: Array2<f64>,
    count: usize,
}

impl CovAccumulator {
    pub fn new(d: usize) -> Self {
        Self {
            shift: None,
            sum: Array1::zeros(d),
            outer: Array2::zeros((d, d)),
            count: 0,
        }
    }

    pub fn push(&mut self, chunk: ArrayView2<'_, f64>) -> Result<()> {
        let d = self.sum.len();
        if chunk.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: chunk.ncols(),
            });
        }
        if chunk.nrows() == 0 {
            return Ok(());
        }
        if let Some(((row, col), _)) = chunk.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteInput {
                row: self.count + row,
                col,
            });
        }
        let shift = self
            .shift
            .get_or_insert_with(|| chunk.mean_axis(Axis(0)).expect("non-empty chunk"));
        let shifted = &chunk - &*shift;
        self.sum += &shifted.sum_axis(Axis(0));
        self.outer += &shifted.t().dot(&shifted);
        self.count += chunk.nrows();
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(&self, estimator: Estimator) -> Result<CovMatrix> {
        if self.count < 2 {
            return Err(Error::DimensionTooSmall {
                what: "point count",
                got: self.count,
                min: 2,
            });
        }
        let n = self.count as f64;
        let mean = &self.sum / n;
        let d = mean.len();
        let mut values = self.outer.clone();
        for i in 0..d {
            for j in 0..d {
                values[[i, j]] -= n * mean[i] * mean[j];
            }
        }
        values /= estimator.denominator(self.count);
        Ok(CovMatrix::symmetrized(values, self.count, estimator))
    }
}

/// Shrinkage toward a reference covariance: `(1 − ζ)·Σ_X + ζ·Σ_S`.
///
/// ζ = 0 leaves `sigma_x` untouched; ζ = 1 returns `sigma_s`.
pub fn shrink(sigma_x: &CovMatrix, sigma_s: &CovMatrix, zeta: f64) -> Result<CovMatrix> {
    if sigma_x.dim() != sigma_s.dim() {
        return Err(Error::DimensionMismatch {
            expected: sigma_x.dim(),
            got: sigma_s.dim(),
        });
    }
    check_zeta(zeta)?;
    let values = &sigma_x.values * (1.0 - zeta) + &sigma_s.values * zeta;
    Ok(CovMatrix {
        values,
        sample_count: sigma_x.sample_count,
        estimator: sigma_x.estimator,
    })
}

pub(crate) fn check_zeta(zeta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&zeta) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "shrinkage parameter must lie in [0, 1], got {zeta}"
        )))
    }
}
