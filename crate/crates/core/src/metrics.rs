//! Isotropy measures: IsoScore* (with covariance shrinkage), IsoScore, average
//! random cosine similarity, and the partition isotropy score.

use ndarray::{Array1, Axis};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{
    self, covariance, shrink, sym_eigen, sym_eigvals, CovMatrix, Estimator, PointCloud, Spectrum,
};

/// Largest projection `cᵀx` accepted before `exp` would overflow.
pub const PARTITION_OVERFLOW_GUARD: f64 = 700.0;

/// IsoScore* and every intermediate of its computation.
#[derive(Debug, Clone)]
pub struct IsoReport {
    pub score: f64,
    pub defect: f64,
    pub phi: f64,
    pub raw_spectrum: Spectrum,
    pub normalized_spectrum: Array1<f64>,
    pub zeta: f64,
    pub used_shrinkage: bool,
}

/// Monte-Carlo or direct evaluation of a scalar isotropy measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSample {
    /// Number of evaluated terms: sampled pairs for cosine similarity,
    /// candidate directions for the partition score.
    pub pair_count: usize,
    pub seed: u64,
    pub value: f64,
}

/// Turns a spectrum into the isotropy score: rescale to norm √d, measure the
/// defect from the all-ones vector, then map through φ and ι.
pub fn score_spectrum(spectrum: Spectrum, zeta: f64) -> Result<IsoReport> {
    let d = spectrum.len();
    if d < 2 {
        return Err(Error::DimensionTooSmall {
            what: "dimension",
            got: d,
            min: 2,
        });
    }
    let norm = spectrum.norm();
    if norm == 0.0 {
        return Err(Error::ZeroSpectrum);
    }
    let df = d as f64;
    let sqrt_d = df.sqrt();
    let normalized = Array1::from_iter(spectrum.values().iter().map(|l| sqrt_d * l / norm));
    let deviation = normalized
        .iter()
        .map(|v| (v - 1.0) * (v - 1.0))
        .sum::<f64>()
        .sqrt();
    let defect = (deviation / (2.0 * (df - sqrt_d)).sqrt()).clamp(0.0, 1.0);
    let phi = (df - defect * defect * (df - sqrt_d)).powi(2) / (df * df);
    let score = ((df * phi - 1.0) / (df - 1.0)).clamp(0.0, 1.0);
    Ok(IsoReport {
        score,
        defect,
        phi,
        raw_spectrum: spectrum,
        normalized_spectrum: normalized,
        zeta,
        used_shrinkage: zeta > 0.0,
    })
}

/// IsoScore* of a covariance that is already estimated.
pub fn isoscore_star_cov(sigma_x: &CovMatrix, zeta: f64, sigma_s: &CovMatrix) -> Result<IsoReport> {
    let shrunk = shrink(sigma_x, sigma_s, zeta)?;
    score_spectrum(sym_eigvals(&shrunk)?, zeta)
}

/// IsoScore* of a point cloud, shrinking its unbiased covariance toward `sigma_s`
/// with weight `zeta`.
pub fn isoscore_star(x: &PointCloud, zeta: f64, sigma_s: &CovMatrix) -> Result<IsoReport> {
    x.require_metric_shape()?;
    if sigma_s.dim() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: sigma_s.dim(),
        });
    }
    tensor::check_zeta(zeta)?;
    let sigma_x = covariance(x, Estimator::Unbiased)?;
    isoscore_star_cov(&sigma_x, zeta, sigma_s)
}

/// The original IsoScore: rotate the cloud onto its principal axes and score
/// the diagonal of the rotated covariance.
pub fn isoscore(x: &PointCloud) -> Result<IsoReport> {
    x.require_metric_shape()?;
    let sigma = covariance(x, Estimator::Unbiased)?;
    let axes = sym_eigen(&sigma)?;
    let reoriented = PointCloud::new(x.view().dot(&axes.vectors))?;
    let rotated_cov = covariance(&reoriented, Estimator::Unbiased)?;
    let diagonal = rotated_cov.values().diag().to_vec();
    score_spectrum(Spectrum::from_eigenvalues(diagonal)?, 0.0)
}

/// Mean cosine similarity over `pair_count` uniformly drawn index pairs `i ≠ j`.
pub fn avg_random_cosine(x: &PointCloud, pair_count: usize, seed: u64) -> Result<MetricSample> {
    let n = x.n_points();
    if n < 2 {
        return Err(Error::DimensionTooSmall {
            what: "point count",
            got: n,
            min: 2,
        });
    }
    if pair_count == 0 {
        return Err(Error::InvalidParameter("pair count must be positive".into()));
    }
    let data = x.view();
    let norms: Vec<f64> = data.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mut rng = tensor::seeded_rng(seed);
    let mut total = 0.0;
    for _ in 0..pair_count {
        let (i, j) = loop {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i != j {
                break (i, j);
            }
        };
        for k in [i, j] {
            if norms[k] == 0.0 {
                return Err(Error::ZeroVectorSampled { index: k });
            }
        }
        total += data.row(i).dot(&data.row(j)) / (norms[i] * norms[j]);
    }
    Ok(MetricSample {
        pair_count,
        seed,
        value: (total / pair_count as f64).clamp(-1.0, 1.0),
    })
}

/// `min_c Z(c) / max_c Z(c)` with `Z(c) = Σ_x exp(cᵀx)`, over the unit
/// eigenvectors of `XᵀX` and their negations.
pub fn partition_isotropy(x: &PointCloud) -> Result<MetricSample> {
    let n = x.n_points();
    if n < 2 {
        return Err(Error::DimensionTooSmall {
            what: "point count",
            got: n,
            min: 2,
        });
    }
    let data = x.view();
    let gram = CovMatrix::new(data.t().dot(&data), n, Estimator::Population)?;
    let directions = sym_eigen(&gram)?.vectors;
    let projections = data.dot(&directions);
    let mut log_z = Vec::with_capacity(2 * directions.ncols());
    for column in projections.axis_iter(Axis(1)) {
        for sign in [1.0, -1.0] {
            let mut peak = f64::NEG_INFINITY;
            for &p in column {
                let v = sign * p;
                if v > PARTITION_OVERFLOW_GUARD {
                    return Err(Error::OverflowGuard { value: v });
                }
                peak = peak.max(v);
            }
            let sum: f64 = column.iter().map(|&p| (sign * p - peak).exp()).sum();
            log_z.push(peak + sum.ln());
        }
    }
    let lo = log_z.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = log_z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(MetricSample {
        pair_count: log_z.len(),
        seed: 0,
        value: (lo - hi).exp().clamp(0.0, 1.0),
    })
}
