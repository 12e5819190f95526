//! Reverse-mode gradient of IsoScore* with respect to the input cloud, and the
//! central finite-difference oracle used to check it.
//!
//! The chain runs score → φ → δ² → normalized spectrum → spectrum → Σ_ζ → Σ_X
//! → X. Eigenvalue sensitivities use `∂λ_i/∂Σ = v_i v_iᵀ`, which requires simple
//! eigenvalues; the reference covariance Σ_S is treated as a constant.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::metrics::{isoscore_star, score_spectrum};
use crate::tensor::{
    self, covariance, shrink, CovMatrix, EigenDecomposition, Estimator, PointCloud, Spectrum,
};

/// Eigenvalue gaps below `DEGENERACY_GAP * λ_max` make the gradient ill-defined.
pub const DEGENERACY_GAP: f64 = 1e-8;

/// Per-index diagonal jitter (times λ_max) applied under [`DegeneracyPolicy::Jitter`].
pub const JITTER_SCALE: f64 = 1e-10;

/// ∂score/∂X, same shape as the input cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudGradient {
    pub values: Array2<f64>,
}

impl CloudGradient {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Directional derivative along `direction` (same shape as the cloud).
    pub fn directional(&self, direction: &Array2<f64>) -> f64 {
        (&self.values * direction).sum()
    }
}

/// What to do when Σ_ζ has (near-)repeated eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegeneracyPolicy {
    #[default]
    Error,
    /// Add `JITTER_SCALE·λ_max·(i+1)` to diagonal entry `i` and differentiate
    /// the perturbed matrix.
    Jitter,
}

/// Score and gradient from one forward/backward pass.
#[derive(Debug, Clone)]
pub struct ScoreAndGradient {
    pub score: f64,
    pub gradient: CloudGradient,
    pub jittered: bool,
}

/// Exact gradient of `isoscore_star(x, zeta, sigma_s).score` with respect to `x`.
pub fn grad_isoscore_star(x: &PointCloud, zeta: f64, sigma_s: &CovMatrix) -> Result<CloudGradient> {
    Ok(isoscore_star_with_grad(x, zeta, sigma_s, DegeneracyPolicy::Error)?.gradient)
}

pub fn isoscore_star_with_grad(
    x: &PointCloud,
    zeta: f64,
    sigma_s: &CovMatrix,
    policy: DegeneracyPolicy,
) -> Result<ScoreAndGradient> {
    x.require_metric_shape()?;
    if sigma_s.dim() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: sigma_s.dim(),
        });
    }
    tensor::check_zeta(zeta)?;
    let n = x.n_points();
    let sigma_x = covariance(x, Estimator::Unbiased)?;
    let shrunk = shrink(&sigma_x, sigma_s, zeta)?;
    let (eig, jittered) = decompose_checked(&shrunk, policy)?;

    let spectrum = Spectrum::from_eigenvalues(eig.values.to_vec())?;
    let report = score_spectrum(spectrum, zeta)?;
    // Spectrum sorts descending exactly like the decomposition, so entries align.
    let clamped = Array1::from(report.raw_spectrum.values().to_vec());
    let d_lambda = score_wrt_spectrum(&clamped, &report.normalized_spectrum, report.defect);

    // ∂score/∂Σ_ζ = V diag(g) Vᵀ, then through the shrinkage weight.
    let weighted = &eig.vectors * &d_lambda;
    let d_sigma = weighted.dot(&eig.vectors.t()) * (1.0 - zeta);

    // Σ_X = X_cᵀ X_c / (n − 1)  ⇒  ∂/∂X = 2 X_c G / (n − 1).
    let centered = tensor::centered(x.view());
    let values = centered.dot(&d_sigma) * (2.0 / (n as f64 - 1.0));
    Ok(ScoreAndGradient {
        score: report.score,
        gradient: CloudGradient { values },
        jittered,
    })
}

/// ∂score/∂λ for the (clamped, descending) spectrum `lambda`.
fn score_wrt_spectrum(lambda: &Array1<f64>, normalized: &Array1<f64>, defect: f64) -> Array1<f64> {
    let d = lambda.len() as f64;
    let sqrt_d = d.sqrt();
    let norm = lambda.dot(lambda).sqrt();
    let gap = d - sqrt_d;

    let d_phi = d / (d - 1.0);
    // φ = (d − δ²(d − √d))² / d²
    let d_defect_sq = d_phi * 2.0 * (d - defect * defect * gap) * (-gap) / (d * d);
    // δ² = ‖Λ̂ − 1‖² / (2(d − √d))
    let d_normalized = normalized.mapv(|v| d_defect_sq * (v - 1.0) / gap);
    // Λ̂ = √d Λ / ‖Λ‖
    let radial = lambda.dot(&d_normalized) / (norm * norm * norm);
    (&d_normalized / norm - &(lambda * radial)) * sqrt_d
}

fn decompose_checked(shrunk: &CovMatrix, policy: DegeneracyPolicy) -> Result<(EigenDecomposition, bool)> {
    let eig = tensor::sym_eigen(shrunk)?;
    let lambda_max = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let threshold = DEGENERACY_GAP * lambda_max;
    let gap = eig.min_gap();
    if gap >= threshold {
        return Ok((eig, false));
    }
    match policy {
        DegeneracyPolicy::Error => Err(Error::DegenerateSpectrum { gap, threshold }),
        DegeneracyPolicy::Jitter => {
            log::warn!("near-degenerate spectrum (gap {gap:e} < {threshold:e}); applying diagonal jitter");
            let mut values = shrunk.values().clone();
            for i in 0..values.nrows() {
                values[[i, i]] += JITTER_SCALE * lambda_max * (i + 1) as f64;
            }
            let jittered = CovMatrix::new(values, shrunk.sample_count(), shrunk.estimator())?;
            Ok((tensor::sym_eigen(&jittered)?, true))
        }
    }
}

/// Central differences `(ι(X + h·e) − ι(X − h·e)) / 2h` for every coordinate.
pub fn finite_diff_grad(x: &PointCloud, zeta: f64, sigma_s: &CovMatrix, h: f64) -> Result<CloudGradient> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "step size must be positive, got {h}"
        )));
    }
    let base = x.as_array();
    let mut values = Array2::zeros(base.raw_dim());
    let mut probe = base.clone();
    for i in 0..base.nrows() {
        for j in 0..base.ncols() {
            let orig = base[[i, j]];
            probe[[i, j]] = orig + h;
            let plus = isoscore_star(&PointCloud::new(probe.clone())?, zeta, sigma_s)?.score;
            probe[[i, j]] = orig - h;
            let minus = isoscore_star(&PointCloud::new(probe.clone())?, zeta, sigma_s)?.score;
            probe[[i, j]] = orig;
            values[[i, j]] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(CloudGradient { values })
}

/// `max |a − b| / (1e-8 + max |b|)`: the agreement measure used against the oracle.
pub fn relative_error(analytic: &CloudGradient, oracle: &CloudGradient) -> f64 {
    let diff = (&analytic.values - &oracle.values)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    diff / (1e-8 + oracle.max_abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{sample_gaussian, seeded_rng};
    use ndarray::Axis;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn anisotropic_cloud(n: usize, d: usize, seed: u64) -> PointCloud {
        let var: Vec<f64> = (0..d).map(|k| 1.0 + 3.0 * (d - k) as f64 / d as f64).collect();
        sample_gaussian(&vec![0.5; d], &var, n, seed).unwrap()
    }

    fn random_psd(d: usize, seed: u64) -> CovMatrix {
        let mut rng = seeded_rng(seed);
        let a = Array2::from_shape_fn((d, d), |_| rng.sample::<f64, _>(StandardNormal));
        CovMatrix::new(a.dot(&a.t()) / d as f64, d, Estimator::Unbiased).unwrap()
    }

    #[test]
    fn matches_finite_differences() {
        let x = anisotropic_cloud(32, 8, 11);
        let s = random_psd(8, 11);
        let analytic = grad_isoscore_star(&x, 0.3, &s).unwrap();
        let fd = finite_diff_grad(&x, 0.3, &s, 1e-5).unwrap();
        let err = relative_error(&analytic, &fd);
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn scale_and_translation_directions_vanish() {
        let x = anisotropic_cloud(20, 5, 3);
        let g = grad_isoscore_star(&x, 0.0, &CovMatrix::zeros(5)).unwrap();
        let scale = g.directional(x.as_array());
        let translate = g.directional(&Array2::from_shape_fn(x.as_array().raw_dim(), |(_, j)| {
            (j + 1) as f64
        }));
        assert!(scale.abs() < 1e-8, "{scale}");
        assert!(translate.abs() < 1e-8, "{translate}");
        let col_sums = g.values.sum_axis(Axis(0));
        assert!(col_sums.iter().all(|v| v.abs() < 1e-8 * g.max_abs().max(1.0)));
    }

    #[test]
    fn finite_difference_step_robustness() {
        let x = anisotropic_cloud(16, 4, 2);
        let s = random_psd(4, 2);
        let coarse = finite_diff_grad(&x, 0.3, &s, 1e-5).unwrap();
        let fine = finite_diff_grad(&x, 0.3, &s, 1e-6).unwrap();
        assert!(relative_error(&fine, &coarse) < 1e-4);
        let tr = coarse.directional(&Array2::ones(x.as_array().raw_dim()));
        assert!(tr.abs() < 1e-6);
    }

    #[test]
    fn degenerate_spectrum_errors_or_jitters() {
        // Shrinking fully onto the identity leaves a d-fold eigenvalue.
        let x = anisotropic_cloud(12, 4, 1);
        let id = CovMatrix::identity(4);
        assert!(matches!(
            grad_isoscore_star(&x, 1.0, &id),
            Err(Error::DegenerateSpectrum { .. })
        ));
        let out = isoscore_star_with_grad(&x, 1.0, &id, DegeneracyPolicy::Jitter).unwrap();
        assert!(out.jittered);
        assert!(out.gradient.values.iter().all(|v| v.is_finite()));
        assert_eq!(out.gradient.max_abs(), 0.0);
    }

    #[test]
    fn rejects_bad_step() {
        let x = anisotropic_cloud(5, 2, 0);
        assert!(finite_diff_grad(&x, 0.0, &CovMatrix::zeros(2), 0.0).is_err());
    }
}
