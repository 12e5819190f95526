use isoscope::grad::{grad_isoscore_star, isoscore_star_with_grad, DegeneracyPolicy};
use isoscope::metrics::{isoscore_star, score_spectrum};
use isoscope::nn::cosreg_penalty;
use isoscope::tensor::{covariance, shrink, sym_eigvals, CovMatrix, Estimator, PointCloud, Spectrum};
use isoscope::twonn::twonn_id;
use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;

fn cloud(max_n: usize, max_d: usize) -> impl Strategy<Value = Array2<f64>> {
    (8..=max_n, 2..=max_d).prop_flat_map(|(n, d)| {
        prop::collection::vec(-5.0f64..5.0, n * d)
            .prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
    })
}

fn cloud_and_vector(max_n: usize, max_d: usize) -> impl Strategy<Value = (Array2<f64>, Vec<f64>)> {
    cloud(max_n, max_d).prop_flat_map(|x| {
        let d = x.ncols();
        (Just(x), prop::collection::vec(-3.0f64..3.0, d))
    })
}

/// Householder reflection I − 2vvᵀ/‖v‖², orthogonal for any non-zero v.
fn householder(v: &[f64]) -> Array2<f64> {
    let v = Array1::from(v.to_vec());
    let norm2 = v.dot(&v);
    if norm2 < 1e-6 {
        return Array2::eye(v.len());
    }
    let outer = v.view().insert_axis(Axis(1)).dot(&v.view().insert_axis(Axis(0)));
    Array2::eye(v.len()) - outer * (2.0 / norm2)
}

fn pc(x: Array2<f64>) -> PointCloud {
    PointCloud::new(x).unwrap()
}

fn score0(x: &Array2<f64>) -> f64 {
    let x = pc(x.clone());
    isoscore_star(&x, 0.0, &CovMatrix::zeros(x.dim())).unwrap().score
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0, |m, v| m.max(v.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn covariance_ignores_translation((x, c) in cloud_and_vector(40, 6)) {
        let shifted = &x + &Array1::from(c);
        let a = covariance(&pc(x), Estimator::Unbiased).unwrap();
        let b = covariance(&pc(shifted), Estimator::Unbiased).unwrap();
        let scale = a.values().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(max_abs_diff(a.values(), b.values()) < 1e-10 * scale);
    }

    #[test]
    fn trace_is_mean_pairwise_squared_distance(x in cloud(30, 6)) {
        let n = x.nrows() as f64;
        let mut pair_sum = 0.0;
        for a in x.rows() {
            for b in x.rows() {
                pair_sum += (&a - &b).mapv(|v| v * v).sum();
            }
        }
        let trace = covariance(&pc(x), Estimator::Unbiased).unwrap().trace();
        let oracle = pair_sum / (2.0 * n * (n - 1.0));
        prop_assert!((trace - oracle).abs() < 1e-9 * oracle.max(1.0));
    }

    #[test]
    fn eigenvalues_survive_orthogonal_similarity((x, v) in cloud_and_vector(30, 7)) {
        let c = covariance(&pc(x), Estimator::Unbiased).unwrap();
        let q = householder(&v);
        let rotated = CovMatrix::new(q.dot(c.values()).dot(&q.t()), c.sample_count(), Estimator::Unbiased).unwrap();
        let a = sym_eigvals(&c).unwrap();
        let b = sym_eigvals(&rotated).unwrap();
        for (p, r) in a.values().iter().zip(b.values()) {
            prop_assert!((p - r).abs() < 1e-9 * a.max().max(1.0));
        }
    }

    #[test]
    fn shrink_is_affine_in_zeta(x in cloud(30, 5), y in cloud(30, 5), z1 in 0.0f64..1.0, z2 in 0.0f64..1.0, t in 0.0f64..1.0) {
        prop_assume!(x.ncols() == y.ncols());
        let sx = covariance(&pc(x), Estimator::Unbiased).unwrap();
        let ss = covariance(&pc(y), Estimator::Unbiased).unwrap();
        let a = shrink(&sx, &ss, z1).unwrap();
        let b = shrink(&sx, &ss, z2).unwrap();
        let mid = shrink(&sx, &ss, (1.0 - t) * z1 + t * z2).unwrap();
        let blend = a.values() * (1.0 - t) + b.values() * t;
        prop_assert!(max_abs_diff(&blend, mid.values()) < 1e-10 * mid.trace().max(1.0));
    }

    #[test]
    fn score_invariances((x, v) in cloud_and_vector(40, 6), shift in -100.0f64..100.0, scale in 0.01f64..100.0) {
        let base = score0(&x);
        prop_assert!((0.0..=1.0).contains(&base));
        prop_assert!((score0(&x.dot(&householder(&v))) - base).abs() < 1e-8);
        prop_assert!((score0(&(&x + shift)) - base).abs() < 1e-8);
        prop_assert!((score0(&(&x * scale)) - base).abs() < 1e-8);
    }

    #[test]
    fn interpolating_toward_flat_spectrum_never_lowers_score(
        values in prop::collection::vec(0.0f64..10.0, 2..12),
        t1 in 0.0f64..1.0,
        t2 in 0.0f64..1.0,
    ) {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        prop_assume!(mean > 1e-6);
        let at = |t: f64| {
            let mixed = values.iter().map(|v| (1.0 - t) * v + t * mean).collect();
            score_spectrum(Spectrum::from_eigenvalues(mixed).unwrap(), 0.0).unwrap().score
        };
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(at(lo) <= at(hi) + 1e-12);
        prop_assert!((at(1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_equivariance((x, v) in cloud_and_vector(30, 5), shift in -10.0f64..10.0, scale in 0.1f64..10.0) {
        let zeros = CovMatrix::zeros(x.ncols());
        let g = match grad_isoscore_star(&pc(x.clone()), 0.0, &zeros) {
            Ok(g) => g.values,
            Err(_) => return Ok(()),
        };
        let tol = 1e-7 * g.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
        let q = householder(&v);
        let rotated = grad_isoscore_star(&pc(x.dot(&q)), 0.0, &zeros).unwrap().values;
        prop_assert!(max_abs_diff(&rotated, &g.dot(&q)) < tol);
        let shifted = grad_isoscore_star(&pc(&x + shift), 0.0, &zeros).unwrap().values;
        prop_assert!(max_abs_diff(&shifted, &g) < tol);
        let scaled = grad_isoscore_star(&pc(&x * scale), 0.0, &zeros).unwrap().values;
        prop_assert!(max_abs_diff(&(scaled * scale), &g) < tol);
    }

    #[test]
    fn small_gradient_steps_move_the_score_the_right_way(x in cloud(30, 5), zeta in 0.0f64..0.9) {
        let x = pc(x);
        let sigma_s = CovMatrix::identity(x.dim());
        let out = isoscore_star_with_grad(&x, zeta, &sigma_s, DegeneracyPolicy::Error);
        let out = match out {
            Ok(o) => o,
            Err(_) => return Ok(()),
        };
        let g = out.gradient.values;
        let norm2 = g.mapv(|v| v * v).sum();
        prop_assume!(norm2 > 1e-16 && out.score < 1.0 - 1e-6);
        let eps = 1e-4 / norm2.sqrt();
        let up = isoscore_star(&pc(x.as_array() + &(&g * eps)), zeta, &sigma_s).unwrap().score;
        let down = isoscore_star(&pc(x.as_array() - &(&g * eps)), zeta, &sigma_s).unwrap().score;
        prop_assert!(up >= out.score && down <= out.score, "{} {} {}", down, out.score, up);
    }

    #[test]
    fn twonn_ignores_isometry_and_scale((x, v) in cloud_and_vector(60, 5), shift in -10.0f64..10.0, scale in 0.1f64..10.0) {
        prop_assume!(x.nrows() >= 20);
        let base = match twonn_id(&pc(x.clone()), 0.1) {
            Ok(e) => e.id_value,
            Err(_) => return Ok(()),
        };
        let moved = (x.dot(&householder(&v)) + shift) * scale;
        let other = twonn_id(&pc(moved), 0.1).unwrap().id_value;
        prop_assert!((other - base).abs() < 1e-9 * base);
    }

    #[test]
    fn cosreg_ignores_positive_row_rescaling(x in cloud(12, 5), seed_scales in prop::collection::vec(0.01f64..100.0, 12)) {
        prop_assume!(x.rows().into_iter().all(|r| r.dot(&r) > 1e-12));
        let base = cosreg_penalty(&pc(x.clone())).unwrap();
        let mut scaled = x.clone();
        for (mut row, s) in scaled.rows_mut().into_iter().zip(seed_scales.iter().cycle()) {
            row *= *s;
        }
        prop_assert!((cosreg_penalty(&pc(scaled)).unwrap() - base).abs() < 1e-12);
        let m = x.nrows() as f64;
        prop_assert!(base >= -1.0 / m - 1e-12 && base <= (m - 1.0) / m + 1e-12);
    }
}
