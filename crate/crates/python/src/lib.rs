//! Python bindings: feature matrices, the three clustering engines, Pearson
//! correlation, stream alignment and the synthetic generators.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use wearclust_core as core;

fn py_err(e: core::Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

#[pyclass(name = "FeatureMatrix", module = "wearclust", frozen)]
struct PyFeatureMatrix {
    inner: core::FeatureMatrix,
}

#[pymethods]
impl PyFeatureMatrix {
    #[new]
    #[pyo3(signature = (rows, column_names=None))]
    fn new(rows: Vec<Vec<f64>>, column_names: Option<Vec<String>>) -> PyResult<Self> {
        let inner = match column_names {
            None => core::FeatureMatrix::from_rows(rows),
            Some(names) => {
                let keys = (0..rows.len() as i64).map(|i| core::RowKey::new("anon", i)).collect();
                core::FeatureMatrix::new(rows, names, keys)
            }
        }
        .py()?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: core::FeatureMatrix::from_csv(text).py()?,
        })
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    #[getter]
    fn n_cols(&self) -> usize {
        self.inner.n_cols()
    }

    #[getter]
    fn column_names(&self) -> Vec<String> {
        self.inner.column_names().to_vec()
    }

    /// Row keys as `(subject_id, second)` pairs.
    #[getter]
    fn row_keys(&self) -> Vec<(String, i64)> {
        self.inner
            .row_keys()
            .iter()
            .map(|k| (k.subject_id.clone(), k.second_ts))
            .collect()
    }

    /// `(mean, stddev)` per column if the matrix is standardized.
    #[getter]
    fn standardization(&self) -> Option<Vec<(f64, f64)>> {
        self.inner
            .standardization()
            .map(|s| s.iter().map(|c| (c.mean, c.stddev)).collect())
    }

    fn to_rows(&self) -> Vec<Vec<f64>> {
        self.inner.to_rows()
    }

    fn column(&self, j: usize) -> PyResult<Vec<f64>> {
        if j >= self.inner.n_cols() {
            return Err(PyValueError::new_err(format!("column {j} out of range")));
        }
        Ok(self.inner.column(j))
    }

    fn mean(&self) -> Vec<f64> {
        self.inner.mean()
    }

    fn standardize(&self) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.standardize().py()?,
        })
    }

    fn inverse_transform(&self) -> Self {
        Self {
            inner: self.inner.inverse_transform(),
        }
    }

    fn whiten(&self) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.whiten().py()?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.n_rows()
    }

    fn __repr__(&self) -> String {
        format!(
            "FeatureMatrix(n_rows={}, columns={:?})",
            self.inner.n_rows(),
            self.inner.column_names()
        )
    }
}

#[pyclass(name = "KMeansModel", module = "wearclust", frozen)]
struct PyKMeansModel {
    inner: core::KMeansModel,
}

#[pymethods]
impl PyKMeansModel {
    #[getter]
    fn centroids(&self) -> Vec<Vec<f64>> {
        self.inner.centroids.clone()
    }

    /// Final objective J.
    #[getter]
    fn objective(&self) -> f64 {
        self.inner.objective
    }

    #[getter]
    fn assignments(&self) -> Vec<usize> {
        self.inner.assignments.clone()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn history(&self) -> Vec<f64> {
        self.inner.history.clone()
    }

    fn predict(&self, m: &PyFeatureMatrix) -> PyResult<Vec<usize>> {
        Ok(core::kmeans_predict(&self.inner, &m.inner).py()?.labels)
    }

    fn __repr__(&self) -> String {
        format!("KMeansModel(k={}, objective={})", self.inner.k(), self.inner.objective)
    }
}

fn parse_distance(s: &str) -> PyResult<core::Distance> {
    match s {
        "squared_euclidean" => Ok(core::Distance::SquaredEuclidean),
        "cosine" => Ok(core::Distance::Cosine),
        _ => Err(PyValueError::new_err(format!("unknown distance `{s}`"))),
    }
}

#[pyfunction]
#[pyo3(signature = (
    m, k, seed=0, replicates=5, distance="squared_euclidean", max_iter=100, tol=1e-9,
    init="kmeanspp", subsample_fraction=0.10
))]
#[allow(clippy::too_many_arguments)]
fn kmeans_fit(
    py: Python<'_>,
    m: &PyFeatureMatrix,
    k: usize,
    seed: u64,
    replicates: usize,
    distance: &str,
    max_iter: usize,
    tol: f64,
    init: &str,
    subsample_fraction: f64,
) -> PyResult<PyKMeansModel> {
    let mut cfg = core::KMeansConfig::new(k).with_seed(seed).with_replicates(replicates);
    cfg.distance = parse_distance(distance)?;
    cfg.max_iter = max_iter;
    cfg.tol = tol;
    cfg.subsample_fraction = subsample_fraction;
    cfg.init = match init {
        "kmeanspp" => core::KMeansInit::KMeansPlusPlus,
        "preliminary_subsample" => core::KMeansInit::PreliminarySubsample,
        _ => return Err(PyValueError::new_err(format!("unknown init `{init}`"))),
    };
    let inner = py.detach(|| core::kmeans_fit(&m.inner, &cfg)).py()?;
    Ok(PyKMeansModel { inner })
}

#[pyclass(name = "GmmModel", module = "wearclust", frozen)]
struct PyGmmModel {
    inner: core::GmmModel,
}

#[pymethods]
impl PyGmmModel {
    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.mixture.weights.clone()
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        self.inner.mixture.means.clone()
    }

    /// Full `d x d` covariance per component, as nested row lists.
    #[getter]
    fn covariances(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner
            .mixture
            .covariances
            .iter()
            .map(|c| c.row_iter().map(|r| r.iter().copied().collect()).collect())
            .collect()
    }

    #[getter]
    fn structure(&self) -> String {
        core::CovarianceStructure::new(self.inner.covariance_shape, self.inner.covariance_sharing).to_string()
    }

    #[getter]
    fn log_likelihood(&self) -> f64 {
        self.inner.log_likelihood
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn history(&self) -> Vec<f64> {
        self.inner.history.clone()
    }

    fn predict(&self, m: &PyFeatureMatrix) -> PyResult<Vec<usize>> {
        Ok(core::gmm_cluster(&self.inner, &m.inner).py()?.labels)
    }

    fn predict_proba(&self, m: &PyFeatureMatrix) -> PyResult<Vec<Vec<f64>>> {
        let a = core::gmm_cluster(&self.inner, &m.inner).py()?;
        Ok(a.responsibilities.unwrap_or_default())
    }

    fn __repr__(&self) -> String {
        format!(
            "GmmModel(k={}, structure={}, log_likelihood={})",
            self.inner.mixture.k(),
            self.structure(),
            self.inner.log_likelihood
        )
    }
}

#[pyfunction]
#[pyo3(signature = (m, k, structure="full_unshared", seed=0, replicates=5, tol=1e-6, max_iter=1000, regularization=1e-6))]
#[allow(clippy::too_many_arguments)]
fn gmm_fit(
    py: Python<'_>,
    m: &PyFeatureMatrix,
    k: usize,
    structure: &str,
    seed: u64,
    replicates: usize,
    tol: f64,
    max_iter: usize,
    regularization: f64,
) -> PyResult<PyGmmModel> {
    let s: core::CovarianceStructure = structure.parse().py()?;
    let mut cfg = core::GmmConfig::new(k).with_seed(seed).with_structure(s);
    cfg.replicates = replicates;
    cfg.tol = tol;
    cfg.max_iter = max_iter;
    cfg.regularization = regularization;
    let inner = py.detach(|| core::gmm_fit(&m.inner, &cfg)).py()?;
    Ok(PyGmmModel { inner })
}

#[pyclass(name = "SomModel", module = "wearclust", frozen)]
struct PySomModel {
    inner: core::SomModel,
}

#[pymethods]
impl PySomModel {
    #[getter]
    fn weights(&self) -> Vec<Vec<f64>> {
        self.inner.weights.clone()
    }

    /// Plane position `(x, y)` of every neuron.
    #[getter]
    fn positions(&self) -> Vec<(f64, f64)> {
        self.inner.grid.neurons.iter().map(|n| (n.x, n.y)).collect()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.grid.rows, self.inner.grid.cols)
    }

    #[getter]
    fn trained_epochs(&self) -> usize {
        self.inner.trained_epochs
    }

    fn bmu(&self, x: Vec<f64>) -> PyResult<usize> {
        core::bmu(&self.inner, &x).py()
    }

    fn hits(&self, m: &PyFeatureMatrix) -> PyResult<Vec<usize>> {
        core::sample_hits(&self.inner, &m.inner).py()
    }

    fn quantization_error(&self, m: &PyFeatureMatrix) -> PyResult<f64> {
        core::quantization_error(&self.inner, &m.inner).py()
    }

    /// `(a, b, distance)` for every pair of adjacent neurons.
    fn u_matrix(&self) -> Vec<(usize, usize, f64)> {
        core::u_matrix(&self.inner)
            .edges
            .into_iter()
            .map(|e| (e.a, e.b, e.distance))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "SomModel(rows={}, cols={}, trained_epochs={})",
            self.inner.grid.rows, self.inner.grid.cols, self.inner.trained_epochs
        )
    }
}

#[pyfunction]
#[pyo3(signature = (m, rows=6, cols=6, epochs=200, initial_radius=None, final_radius=1.0, init="linear_span", seed=0))]
#[allow(clippy::too_many_arguments)]
fn som_fit(
    py: Python<'_>,
    m: &PyFeatureMatrix,
    rows: usize,
    cols: usize,
    epochs: usize,
    initial_radius: Option<f64>,
    final_radius: f64,
    init: &str,
    seed: u64,
) -> PyResult<PySomModel> {
    let mut cfg = core::SomConfig::new(rows, cols).with_seed(seed);
    cfg.epochs = epochs;
    if let Some(r) = initial_radius {
        cfg.initial_radius = r;
    }
    cfg.final_radius = final_radius;
    cfg.init = match init {
        "linear_span" => core::SomInit::LinearSpan,
        "random_sample" => core::SomInit::RandomSample,
        _ => return Err(PyValueError::new_err(format!("unknown init `{init}`"))),
    };
    let inner = py
        .detach(|| core::som_init(&m.inner, &cfg).and_then(|init| core::som_train(&init, &m.inner, &cfg)))
        .py()?;
    Ok(PySomModel { inner })
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    core::pearson(&x, &y).py()
}

/// Pairwise Pearson matrix; `None` where a constant column leaves r undefined.
#[pyfunction]
fn correlation_matrix(m: &PyFeatureMatrix) -> PyResult<Vec<Vec<Option<f64>>>> {
    Ok(core::correlation_report(&m.inner, 1).py()?.r)
}

#[pyfunction]
fn adjusted_rand_index(a: Vec<usize>, b: Vec<usize>) -> PyResult<f64> {
    core::adjusted_rand_index(&a, &b).py()
}

/// Exact k-means optimum by enumeration: `(J, labels)`.
#[pyfunction]
fn bruteforce_kmeans(m: &PyFeatureMatrix, k: usize) -> PyResult<(f64, Vec<usize>)> {
    core::bruteforce_kmeans(&m.inner, k).py()
}

#[pyfunction]
#[pyo3(signature = (centers, sd=1.0, per_cluster=100, seed=0))]
fn gen_blobs(centers: Vec<Vec<f64>>, sd: f64, per_cluster: usize, seed: u64) -> PyResult<(PyFeatureMatrix, Vec<usize>)> {
    let (inner, labels) = core::gen_blobs(&centers, sd, per_cluster, seed).py()?;
    Ok((PyFeatureMatrix { inner }, labels))
}

/// Simulated session as stream CSV texts keyed by `hr`, `accel`, `gsr`, `light`.
#[pyfunction]
#[pyo3(signature = (duration_s=3600, coupling=0.8, seed=0))]
fn simulate_streams(duration_s: u64, coupling: f64, seed: u64) -> PyResult<BTreeMap<String, String>> {
    let schedule = core::ActivitySchedule::mixed(duration_s).with_coupling(coupling);
    let streams = core::gen_sensor_streams(&schedule, seed).py()?;
    Ok(streams
        .iter()
        .map(|s| (s.modality().file_stem().to_string(), s.to_csv()))
        .collect())
}

/// Parses stream CSVs (keyed by `hr`, `accel`, `gsr`, `light`), segments them
/// into recording blocks and aligns per-second features.
///
/// Returns `(matrix, block_count, dropped_seconds)`.
#[pyfunction]
#[pyo3(signature = (streams, subject_id="subject", recipe="hr_accel_mag", on_seconds=180, off_seconds=180))]
fn align_streams(
    streams: BTreeMap<String, String>,
    subject_id: &str,
    recipe: &str,
    on_seconds: i64,
    off_seconds: i64,
) -> PyResult<(PyFeatureMatrix, usize, usize)> {
    let recipe: core::FeatureRecipe = recipe.parse().py()?;
    let mut parsed = Vec::new();
    for (key, text) in &streams {
        let modality = core::Modality::ALL
            .into_iter()
            .find(|m| m.file_stem() == key || m.name() == key)
            .ok_or_else(|| PyValueError::new_err(format!("unknown stream `{key}`")))?;
        parsed.push(core::parse_stream(text.as_bytes(), modality).py()?);
    }
    let schedule = core::BlockSchedule {
        on_ms: on_seconds * 1000,
        off_ms: off_seconds * 1000,
    };
    let seg = core::segment_blocks(&parsed, schedule, subject_id).py()?;
    let aligned = core::align_blocks(&seg.blocks, recipe).py()?;
    Ok((
        PyFeatureMatrix { inner: aligned.matrix },
        seg.blocks.len(),
        aligned.dropped_seconds,
    ))
}

#[pymodule]
fn wearclust(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyFeatureMatrix>()?;
    m.add_class::<PyKMeansModel>()?;
    m.add_class::<PyGmmModel>()?;
    m.add_class::<PySomModel>()?;
    m.add_function(wrap_pyfunction!(kmeans_fit, m)?)?;
    m.add_function(wrap_pyfunction!(gmm_fit, m)?)?;
    m.add_function(wrap_pyfunction!(som_fit, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(adjusted_rand_index, m)?)?;
    m.add_function(wrap_pyfunction!(bruteforce_kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(gen_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_streams, m)?)?;
    m.add_function(wrap_pyfunction!(align_streams, m)?)?;
    Ok(())
}
