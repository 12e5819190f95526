//! TwoNN intrinsic-dimension estimator.
//!
//! For every point, μ = r₂ / r₁ is the ratio of its second to first nearest
//! neighbor distance. On a manifold of dimension m, μ is Pareto(m), so ln μ is
//! exponential with rate m. The largest `discard_fraction` of the ratios are
//! treated as right-censored and the rate is the censored maximum-likelihood
//! estimate.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::PointCloud;

pub const DEFAULT_DISCARD_FRACTION: f64 = 0.1;
pub const MIN_POINTS: usize = 20;
pub const MIN_RETAINED: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdEstimate {
    pub id_value: f64,
    pub n_used: usize,
    pub discard_fraction: f64,
}

pub fn twonn_id(x: &PointCloud, discard_fraction: f64) -> Result<IdEstimate> {
    let n = x.n_points();
    if n < MIN_POINTS {
        return Err(Error::TooFewPoints {
            got: n,
            min: MIN_POINTS,
        });
    }
    if !(0.0..1.0).contains(&discard_fraction) {
        return Err(Error::InvalidParameter(format!(
            "discard fraction must lie in [0, 1), got {discard_fraction}"
        )));
    }
    let n_used = ((1.0 - discard_fraction) * n as f64).floor() as usize;
    if n_used < MIN_RETAINED {
        return Err(Error::TooFewPoints {
            got: n_used,
            min: MIN_RETAINED,
        });
    }

    let ratios: Vec<Result<f64>> = (0..n).into_par_iter().map(|i| neighbor_ratio(x, i)).collect();
    let mut log_mu = ratios
        .into_iter()
        .map(|r| r.map(f64::ln))
        .collect::<Result<Vec<f64>>>()?;
    log_mu.sort_by(f64::total_cmp);

    let retained: f64 = log_mu[..n_used].iter().sum();
    let censored = (n - n_used) as f64 * log_mu[n_used - 1];
    let exposure = retained + censored;
    if exposure <= 0.0 {
        return Err(Error::DegenerateNeighborRatios);
    }
    Ok(IdEstimate {
        id_value: n_used as f64 / exposure,
        n_used,
        discard_fraction,
    })
}

/// r₂ / r₁ for point `i`, by exhaustive scan.
fn neighbor_ratio(x: &PointCloud, i: usize) -> Result<f64> {
    let data = x.view();
    let p = data.row(i);
    let (mut r1, mut r2) = (f64::INFINITY, f64::INFINITY);
    for (j, q) in data.rows().into_iter().enumerate() {
        if j == i {
            continue;
        }
        let dist: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist < r1 {
            r2 = r1;
            r1 = dist;
        } else if dist < r2 {
            r2 = dist;
        }
    }
    if r1 == 0.0 {
        return Err(Error::DuplicatePoints { index: i });
    }
    Ok((r2 / r1).sqrt())
}
