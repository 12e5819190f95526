//! Symmetric eigendecomposition: Householder reduction to tridiagonal form
//! followed by implicit-shift QL iteration (the EISPACK tred2/tql2 pair).

use ndarray::{Array1, Array2};

use super::CovMatrix;
use crate::error::{Error, Result};

/// Eigenvalues below `-NEGATIVE_TOLERANCE * λ_max` are an invariant violation;
/// anything between that and zero is rounding noise and is clamped.
pub const NEGATIVE_TOLERANCE: f64 = 1e-9;

const MAX_QL_ITERATIONS: usize = 64;

/// Eigenvalues of a covariance matrix, sorted descending and clamped at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    values: Vec<f64>,
}

impl Spectrum {
    /// Sorts, validates against [`NEGATIVE_TOLERANCE`], and clamps.
    pub fn from_eigenvalues(mut values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite eigenvalue {v}")));
        }
        values.sort_by(|a, b| b.total_cmp(a));
        let max = values.first().copied().unwrap_or(0.0);
        let min = values.last().copied().unwrap_or(0.0);
        if min < -NEGATIVE_TOLERANCE * max.max(0.0) {
            return Err(Error::NotPositiveSemidefinite { min, max });
        }
        for v in &mut values {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Full decomposition `C = V diag(values) Vᵀ`. Column `k` of `vectors` pairs with
/// `values[k]`; values are sorted descending and *not* clamped.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

impl EigenDecomposition {
    pub fn reconstruct(&self) -> Array2<f64> {
        let scaled = &self.vectors * &self.values;
        scaled.dot(&self.vectors.t())
    }

    /// Smallest gap between consecutive (sorted) eigenvalues.
    pub fn min_gap(&self) -> f64 {
        self.values
            .windows(2)
            .into_iter()
            .map(|w| (w[0] - w[1]).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

/// All eigenvalues of `c`, sorted descending, negative noise clamped to zero.
pub fn sym_eigvals(c: &CovMatrix) -> Result<Spectrum> {
    let values = eigenvalues_of(c.values())?;
    Spectrum::from_eigenvalues(values)
}

/// Eigenvalues and orthonormal eigenvectors of `c`.
pub fn sym_eigen(c: &CovMatrix) -> Result<EigenDecomposition> {
    eigen_of(c.values())
}

pub(crate) fn eigenvalues_of(a: &Array2<f64>) -> Result<Vec<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut work = Tridiagonal::reduce(a, false);
    work.ql(None)?;
    Ok(work.diag)
}

pub(crate) fn eigen_of(a: &Array2<f64>) -> Result<EigenDecomposition> {
    let n = a.nrows();
    if n == 0 {
        return Ok(EigenDecomposition {
            values: Array1::zeros(0),
            vectors: Array2::zeros((0, 0)),
        });
    }
    let mut work = Tridiagonal::reduce(a, true);
    // Rows of `basis` are eigenvectors so the QL rotations touch contiguous memory.
    let mut basis = transpose(&work.z, n);
    work.ql(Some(&mut basis))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| work.diag[j].total_cmp(&work.diag[i]));
    let values = Array1::from_iter(order.iter().map(|&k| work.diag[k]));
    let mut vectors = Array2::zeros((n, n));
    for (col, &k) in order.iter().enumerate() {
        for row in 0..n {
            vectors[[row, col]] = basis[k * n + row];
        }
    }
    Ok(EigenDecomposition { values, vectors })
}

fn transpose(m: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = m[i * n + j];
        }
    }
    t
}

struct Tridiagonal {
    n: usize,
    diag: Vec<f64>,
    off: Vec<f64>,
    /// Row-major n×n: the accumulated orthogonal transform when requested,
    /// otherwise scratch.
    z: Vec<f64>,
}

impl Tridiagonal {
    /// Householder reduction of the symmetric matrix `a`. When `accumulate` is
    /// set, `z` ends holding the orthogonal matrix Q with `a = Q T Qᵀ`.
    fn reduce(a: &Array2<f64>, accumulate: bool) -> Self {
        let n = a.nrows();
        let mut v: Vec<f64> = a.iter().copied().collect();
        let mut d = vec![0.0; n];
        let mut e = vec![0.0; n];
        let idx = |i: usize, j: usize| i * n + j;

        d.copy_from_slice(&v[idx(n - 1, 0)..idx(n - 1, 0) + n]);

        for i in (1..n).rev() {
            let mut scale = 0.0;
            let mut h = 0.0;
            for dk in &d[..i] {
                scale += dk.abs();
            }
            if scale == 0.0 {
                e[i] = d[i - 1];
                for j in 0..i {
                    d[j] = v[idx(i - 1, j)];
                    v[idx(i, j)] = 0.0;
                    v[idx(j, i)] = 0.0;
                }
            } else {
                for dk in &mut d[..i] {
                    *dk /= scale;
                    h += *dk * *dk;
                }
                let mut f = d[i - 1];
                let mut g = h.sqrt();
                if f > 0.0 {
                    g = -g;
                }
                e[i] = scale * g;
                h -= f * g;
                d[i - 1] = f - g;
                e[..i].fill(0.0);

                for j in 0..i {
                    f = d[j];
                    v[idx(j, i)] = f;
                    g = e[j] + v[idx(j, j)] * f;
                    for k in (j + 1)..i {
                        g += v[idx(k, j)] * d[k];
                        e[k] += v[idx(k, j)] * f;
                    }
                    e[j] = g;
                }
                f = 0.0;
                for j in 0..i {
                    e[j] /= h;
                    f += e[j] * d[j];
                }
                let hh = f / (h + h);
                for j in 0..i {
                    e[j] -= hh * d[j];
                }
                for j in 0..i {
                    f = d[j];
                    g = e[j];
                    for k in j..i {
                        v[idx(k, j)] -= f * e[k] + g * d[k];
                    }
                    d[j] = v[idx(i - 1, j)];
                    v[idx(i, j)] = 0.0;
                }
            }
            d[i] = h;
        }

        if !accumulate {
            // The reduction leaves the tridiagonal's diagonal on the diagonal of v.
            for (i, di) in d.iter_mut().enumerate() {
                *di = v[idx(i, i)];
            }
            e[0] = 0.0;
            return Self {
                n,
                diag: d,
                off: e,
                z: v,
            };
        }

        for i in 0..n - 1 {
            v[idx(n - 1, i)] = v[idx(i, i)];
            v[idx(i, i)] = 1.0;
            let h = d[i + 1];
            if h != 0.0 {
                for k in 0..=i {
                    d[k] = v[idx(k, i + 1)] / h;
                }
                for j in 0..=i {
                    let mut g = 0.0;
                    for k in 0..=i {
                        g += v[idx(k, i + 1)] * v[idx(k, j)];
                    }
                    for k in 0..=i {
                        v[idx(k, j)] -= g * d[k];
                    }
                }
            }
            for k in 0..=i {
                v[idx(k, i + 1)] = 0.0;
            }
        }
        for j in 0..n {
            d[j] = v[idx(n - 1, j)];
            v[idx(n - 1, j)] = 0.0;
        }
        v[idx(n - 1, n - 1)] = 1.0;
        e[0] = 0.0;
        Self {
            n,
            diag: d,
            off: e,
            z: v,
        }
    }

    /// Implicit QL on the tridiagonal form. `basis` (row k = vector k) receives
    /// the same rotations when present.
    fn ql(&mut self, mut basis: Option<&mut Vec<f64>>) -> Result<()> {
        let n = self.n;
        let d = &mut self.diag;
        let e = &mut self.off;
        for i in 1..n {
            e[i - 1] = e[i];
        }
        e[n - 1] = 0.0;

        let mut f = 0.0f64;
        let mut tst1 = 0.0f64;
        let eps = f64::EPSILON;
        for l in 0..n {
            tst1 = tst1.max(d[l].abs() + e[l].abs());
            let mut m = l;
            while m < n - 1 {
                if e[m].abs() <= eps * tst1 {
                    break;
                }
                m += 1;
            }
            if m > l {
                let mut iter = 0;
                loop {
                    iter += 1;
                    if iter > MAX_QL_ITERATIONS {
                        return Err(Error::ConvergenceFailure {
                            iterations: MAX_QL_ITERATIONS,
                        });
                    }
                    let mut g = d[l];
                    let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                    let mut r = p.hypot(1.0);
                    if p < 0.0 {
                        r = -r;
                    }
                    d[l] = e[l] / (p + r);
                    d[l + 1] = e[l] * (p + r);
                    let dl1 = d[l + 1];
                    let mut h = g - d[l];
                    for di in &mut d[(l + 2)..n] {
                        *di -= h;
                    }
                    f += h;

                    p = d[m];
                    let mut c = 1.0;
                    let mut c2 = c;
                    let mut c3 = c;
                    let el1 = e[l + 1];
                    let mut s = 0.0;
                    let mut s2 = 0.0;
                    for i in (l..m).rev() {
                        c3 = c2;
                        c2 = c;
                        s2 = s;
                        g = c * e[i];
                        h = c * p;
                        r = p.hypot(e[i]);
                        e[i + 1] = s * r;
                        s = e[i] / r;
                        c = p / r;
                        p = c * d[i] - s * g;
                        d[i + 1] = h + s * (c * g + s * d[i]);
                        if let Some(z) = basis.as_deref_mut() {
                            let (lo, hi) = z.split_at_mut((i + 1) * n);
                            let row_i = &mut lo[i * n..];
                            let row_next = &mut hi[..n];
                            for (a, b) in row_i.iter_mut().zip(row_next.iter_mut()) {
                                let hk = *b;
                                *b = s * *a + c * hk;
                                *a = c * *a - s * hk;
                            }
                        }
                    }
                    p = -s * s2 * c3 * el1 * e[l] / dl1;
                    e[l] = s * p;
                    d[l] = c * p;
                    if e[l].abs() <= eps * tst1 {
                        break;
                    }
                }
            }
            d[l] += f;
            e[l] = 0.0;
        }
        Ok(())
    }
}
