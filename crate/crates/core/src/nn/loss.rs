use ndarray::{Array1, Array2, Axis};

use super::train::ShrinkageState;
use crate::error::{Error, Result};
use crate::metrics::isoscore_star;
use crate::tensor::PointCloud;

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (m, classes) = logits.dim();
    if labels.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: labels.len(),
        });
    }
    let mut grad = Array2::zeros((m, classes));
    let mut loss = 0.0;
    for ((row, mut g), &label) in logits.rows().into_iter().zip(grad.rows_mut()).zip(labels) {
        if label >= classes {
            return Err(Error::InvalidParameter(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let peak = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Array1<f64> = row.mapv(|v| (v - peak).exp());
        let total = exp.sum();
        loss += total.ln() + peak - row[label];
        g.assign(&(exp / total));
        g[label] -= 1.0;
    }
    grad /= m as f64;
    Ok((loss / m as f64, grad))
}

fn unit_rows(h: &PointCloud) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms: Array1<f64> = h.view().map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if let Some(index) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroVectorRow { index });
    }
    let unit = h.as_array() / &norms.view().insert_axis(Axis(1));
    Ok((unit, norms))
}

/// Mean pairwise cosine similarity over distinct pairs, scaled by 1/M²:
/// `(1/M²) Σ_i Σ_{j≠i} x̂_iᵀ x̂_j`.
///
/// Each cosine is `a·b / √((a·a)(b·b))` rather than a dot of pre-normalized
/// rows, so identical rows give exactly 1 and the identical-batch value is
/// exactly (M − 1)/M.
pub fn cosreg_penalty(h: &PointCloud) -> Result<f64> {
    let sq: Vec<f64> = h.view().rows().into_iter().map(|r| r.dot(&r)).collect();
    if let Some(index) = sq.iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroVectorRow { index });
    }
    let m = sq.len() as f64;
    let mut total = 0.0;
    for (i, a) in h.view().rows().into_iter().enumerate() {
        for (j, b) in h.view().rows().into_iter().enumerate() {
            if i != j {
                total += a.dot(&b) / (sq[i] * sq[j]).sqrt();
            }
        }
    }
    Ok(total / (m * m))
}

/// Penalty value and gradient w.r.t. `h`.
///
/// With s = Σ x̂_i the penalty is (‖s‖² − M)/M², whose gradient at row i is
/// `2/M² · (s − (x̂_i·s) x̂_i) / ‖x_i‖`.
pub fn cosreg_gradient(h: &PointCloud) -> Result<(f64, Array2<f64>)> {
    let (unit, norms) = unit_rows(h)?;
    let m = unit.nrows() as f64;
    let s = unit.sum_axis(Axis(0));
    let value = (s.dot(&s) - m) / (m * m);
    let mut grad = Array2::zeros(unit.raw_dim());
    for ((u, mut g), &norm) in unit.rows().into_iter().zip(grad.rows_mut()).zip(&norms) {
        let along = u.dot(&s);
        g.assign(&((&s - &(&u * along)) * (2.0 / (m * m * norm))));
    }
    Ok((value, grad))
}

/// `ce + λ·(1 − IsoScore*(X̃, ζ, Σ_S))`.
pub fn istar_loss(
    ce: f64,
    x_tilde: &PointCloud,
    zeta: f64,
    state: &ShrinkageState,
    lambda: f64,
) -> Result<f64> {
    let score = isoscore_star(x_tilde, zeta, &state.sigma_s)?.score;
    Ok(ce + lambda * (1.0 - score))
}
