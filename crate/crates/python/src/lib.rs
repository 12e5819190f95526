//! Python bindings. Matrices cross the boundary as lists of row lists so the
//! module has no NumPy dependency; `numpy.asarray` turns any result into an
//! array and any 2-D array is accepted after `.tolist()`.

use isoscope::nn::{make_blobs as blobs, BlobsSpec, LabeledData, TrainConfig};
use isoscope::{CovMatrix, Error, ErrorKind, Estimator, PointCloud};
use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use std::path::PathBuf;

create_exception!(
    isoscope_py,
    IsoscopeError,
    PyException,
    "Base class for isoscope failures."
);
create_exception!(
    isoscope_py,
    UsageError,
    IsoscopeError,
    "Invalid argument or configuration."
);
create_exception!(
    isoscope_py,
    DataError,
    IsoscopeError,
    "Malformed or unusable input data."
);
create_exception!(isoscope_py, NumericalError, IsoscopeError, "Numerical breakdown.");

type Rows = Vec<Vec<f64>>;

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.kind() {
        ErrorKind::Usage => UsageError::new_err(msg),
        ErrorKind::Data => DataError::new_err(msg),
        ErrorKind::Numerical => NumericalError::new_err(msg),
    }
}

fn to_cloud(rows: &[Vec<f64>]) -> isoscope::Result<PointCloud> {
    PointCloud::from_rows(rows)
}

fn to_rows(a: &Array2<f64>) -> Rows {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

/// A user-supplied reference covariance, or zeros when none is given.
fn to_sigma_s(rows: Option<&[Vec<f64>]>, d: usize) -> isoscope::Result<CovMatrix> {
    match rows {
        None => Ok(CovMatrix::zeros(d)),
        Some(rows) => {
            let m = CovMatrix::new(to_cloud(rows)?.into_inner(), 1, Estimator::Unbiased)?;
            if m.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: m.dim(),
                });
            }
            Ok(m)
        }
    }
}

fn parse_estimator(name: &str) -> isoscope::Result<Estimator> {
    match name {
        "unbiased" => Ok(Estimator::Unbiased),
        "population" => Ok(Estimator::Population),
        other => Err(Error::InvalidParameter(format!(
            "estimator must be 'unbiased' or 'population', got '{other}'"
        ))),
    }
}

/// Result of an isotropy score computation.
#[pyclass(name = "IsoReport", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyIsoReport {
    score: f64,
    defect: f64,
    phi: f64,
    zeta: f64,
    used_shrinkage: bool,
    raw_spectrum: Vec<f64>,
    normalized_spectrum: Vec<f64>,
}

impl From<isoscope::IsoReport> for PyIsoReport {
    fn from(r: isoscope::IsoReport) -> Self {
        Self {
            score: r.score,
            defect: r.defect,
            phi: r.phi,
            zeta: r.zeta,
            used_shrinkage: r.used_shrinkage,
            raw_spectrum: r.raw_spectrum.values().to_vec(),
            normalized_spectrum: r.normalized_spectrum.to_vec(),
        }
    }
}

#[pymethods]
impl PyIsoReport {
    fn __repr__(&self) -> String {
        format!("IsoReport(score={}, zeta={})", self.score, self.zeta)
    }
}

/// TwoNN intrinsic dimension estimate.
#[pyclass(name = "IdEstimate", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyIdEstimate {
    id_value: f64,
    n_used: usize,
    discard_fraction: f64,
}

#[pymethods]
impl PyIdEstimate {
    fn __repr__(&self) -> String {
        format!("IdEstimate(id_value={}, n_used={})", self.id_value, self.n_used)
    }
}

#[pyfunction]
#[pyo3(signature = (x, estimator = "unbiased"))]
fn covariance(x: Rows, estimator: &str) -> PyResult<Rows> {
    let est = parse_estimator(estimator).map_err(py_err)?;
    let c = isoscope::covariance(&to_cloud(&x).map_err(py_err)?, est).map_err(py_err)?;
    Ok(to_rows(c.values()))
}

/// Eigenvalues of a symmetric matrix, descending.
#[pyfunction]
fn sym_eigvals(c: Rows) -> PyResult<Vec<f64>> {
    let m =
        CovMatrix::new(to_cloud(&c).map_err(py_err)?.into_inner(), 1, Estimator::Unbiased).map_err(py_err)?;
    Ok(isoscope::sym_eigvals(&m).map_err(py_err)?.values().to_vec())
}

/// `(1 - zeta) * sigma_x + zeta * sigma_s`.
#[pyfunction]
fn shrink(sigma_x: Rows, sigma_s: Rows, zeta: f64) -> PyResult<Rows> {
    let x = to_sigma_s(Some(&sigma_x), sigma_x.len()).map_err(py_err)?;
    let s = to_sigma_s(Some(&sigma_s), x.dim()).map_err(py_err)?;
    Ok(to_rows(isoscope::shrink(&x, &s, zeta).map_err(py_err)?.values()))
}

#[pyfunction]
fn sample_gaussian(mean: Vec<f64>, diag_cov: Vec<f64>, n: usize, seed: u64) -> PyResult<Rows> {
    let x = isoscope::tensor::sample_gaussian(&mean, &diag_cov, n, seed).map_err(py_err)?;
    Ok(to_rows(x.as_array()))
}

#[pyfunction]
fn isoscore(py: Python<'_>, x: Rows) -> PyResult<PyIsoReport> {
    py.detach(|| {
        let x = to_cloud(&x)?;
        isoscope::isoscore(&x)
    })
    .map(Into::into)
    .map_err(py_err)
}

/// IsoScore* of a point cloud. `sigma_s` is required when `zeta > 0`.
#[pyfunction]
#[pyo3(signature = (x, zeta = 0.0, sigma_s = None))]
fn isoscore_star(py: Python<'_>, x: Rows, zeta: f64, sigma_s: Option<Rows>) -> PyResult<PyIsoReport> {
    py.detach(|| {
        let x = to_cloud(&x)?;
        let s = to_sigma_s(sigma_s.as_deref(), x.dim())?;
        isoscope::isoscore_star(&x, zeta, &s)
    })
    .map(Into::into)
    .map_err(py_err)
}

/// Exact gradient of IsoScore* with respect to every point coordinate.
#[pyfunction]
#[pyo3(signature = (x, zeta = 0.0, sigma_s = None))]
fn grad_isoscore_star(py: Python<'_>, x: Rows, zeta: f64, sigma_s: Option<Rows>) -> PyResult<Rows> {
    py.detach(|| {
        let x = to_cloud(&x)?;
        let s = to_sigma_s(sigma_s.as_deref(), x.dim())?;
        isoscope::grad_isoscore_star(&x, zeta, &s)
    })
    .map(|g| to_rows(&g.values))
    .map_err(py_err)
}

/// Central finite-difference gradient, for checking `grad_isoscore_star`.
#[pyfunction]
#[pyo3(signature = (x, zeta = 0.0, sigma_s = None, step = 1e-6))]
fn finite_diff_grad(py: Python<'_>, x: Rows, zeta: f64, sigma_s: Option<Rows>, step: f64) -> PyResult<Rows> {
    py.detach(|| {
        let x = to_cloud(&x)?;
        let s = to_sigma_s(sigma_s.as_deref(), x.dim())?;
        isoscope::finite_diff_grad(&x, zeta, &s, step)
    })
    .map(|g| to_rows(&g.values))
    .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (x, pairs = 10_000, seed = 0))]
fn avg_random_cosine(x: Rows, pairs: usize, seed: u64) -> PyResult<f64> {
    let x = to_cloud(&x).map_err(py_err)?;
    Ok(isoscope::avg_random_cosine(&x, pairs, seed)
        .map_err(py_err)?
        .value)
}

#[pyfunction]
fn partition_isotropy(x: Rows) -> PyResult<f64> {
    let x = to_cloud(&x).map_err(py_err)?;
    Ok(isoscope::partition_isotropy(&x).map_err(py_err)?.value)
}

#[pyfunction]
#[pyo3(signature = (x, discard = 0.1))]
fn twonn_id(py: Python<'_>, x: Rows, discard: f64) -> PyResult<PyIdEstimate> {
    let e = py
        .detach(|| isoscope::twonn_id(&to_cloud(&x)?, discard))
        .map_err(py_err)?;
    Ok(PyIdEstimate {
        id_value: e.id_value,
        n_used: e.n_used,
        discard_fraction: e.discard_fraction,
    })
}

/// Mean off-diagonal cosine similarity of the rows.
#[pyfunction]
fn cosreg_penalty(h: Rows) -> PyResult<f64> {
    isoscope::nn::cosreg_penalty(&to_cloud(&h).map_err(py_err)?).map_err(py_err)
}

/// Gaussian blobs as `(features, labels)`.
#[pyfunction]
#[pyo3(signature = (classes = 4, dim = 16, per_class = 1000, spread = 1.0, center_box = 2.0, seed = 0))]
fn make_blobs(
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    center_box: f64,
    seed: u64,
) -> PyResult<(Rows, Vec<usize>)> {
    let spec = BlobsSpec {
        classes,
        dim,
        per_class,
        spread,
        center_box,
        seed,
    };
    let data = blobs(&spec).map_err(py_err)?;
    Ok((to_rows(data.features.as_array()), data.labels))
}

/// Trains an MLP and returns the per-epoch report as a dict. `config` is a
/// JSON object with the same fields as the CLI's training config; missing
/// fields take their defaults.
#[pyfunction]
#[pyo3(signature = (features, labels, config = None))]
fn train<'py>(
    py: Python<'py>,
    features: Rows,
    labels: Vec<usize>,
    config: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let json = py
        .detach(|| -> isoscope::Result<String> {
            let config: TrainConfig = match config {
                Some(text) => serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?,
                None => TrainConfig::default(),
            };
            let data = LabeledData::new(to_cloud(&features)?, labels)?;
            let report = isoscope::nn::train(&config, &data)?;
            Ok(serde_json::to_string(&report)?)
        })
        .map_err(py_err)?;
    py.import("json")?.call_method1("loads", (json,))
}

/// Reads a CSV or binary matrix file, detected by content.
#[pyfunction]
fn read_matrix(path: PathBuf) -> PyResult<Rows> {
    Ok(to_rows(
        isoscope::io::read_matrix(&path).map_err(py_err)?.as_array(),
    ))
}

/// Writes a matrix atomically; `.bin`/`.ism` paths use the binary format.
#[pyfunction]
fn write_matrix(path: PathBuf, x: Rows) -> PyResult<()> {
    isoscope::io::write_matrix(&path, &to_cloud(&x).map_err(py_err)?).map_err(py_err)
}

#[pymodule]
fn isoscope_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("IsoscopeError", py.get_type::<IsoscopeError>())?;
    m.add("UsageError", py.get_type::<UsageError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add("NumericalError", py.get_type::<NumericalError>())?;
    m.add_class::<PyIsoReport>()?;
    m.add_class::<PyIdEstimate>()?;
    m.add_function(wrap_pyfunction!(covariance, m)?)?;
    m.add_function(wrap_pyfunction!(sym_eigvals, m)?)?;
    m.add_function(wrap_pyfunction!(shrink, m)?)?;
    m.add_function(wrap_pyfunction!(sample_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(isoscore, m)?)?;
    m.add_function(wrap_pyfunction!(isoscore_star, m)?)?;
    m.add_function(wrap_pyfunction!(grad_isoscore_star, m)?)?;
    m.add_function(wrap_pyfunction!(finite_diff_grad, m)?)?;
    m.add_function(wrap_pyfunction!(avg_random_cosine, m)?)?;
    m.add_function(wrap_pyfunction!(partition_isotropy, m)?)?;
    m.add_function(wrap_pyfunction!(twonn_id, m)?)?;
    m.add_function(wrap_pyfunction!(cosreg_penalty, m)?)?;
    m.add_function(wrap_pyfunction!(make_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(read_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(write_matrix, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.5], vec![-1.0, 0.0]];
        assert_eq!(to_rows(to_cloud(&rows).unwrap().as_array()), rows);
    }

    #[test]
    fn sigma_s_defaults_to_zeros_and_checks_shape() {
        assert_eq!(to_sigma_s(None, 3).unwrap(), CovMatrix::zeros(3));
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(
            to_sigma_s(Some(&eye), 3),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
        let ragged = vec![vec![1.0, 0.0], vec![0.0]];
        assert!(to_sigma_s(Some(&ragged), 2).is_err());
    }

    #[test]
    fn estimator_names() {
        assert_eq!(parse_estimator("population").unwrap(), Estimator::Population);
        assert_eq!(parse_estimator("unbiased").unwrap(), Estimator::Unbiased);
        assert!(matches!(parse_estimator("mle"), Err(Error::InvalidParameter(_))));
    }
}
