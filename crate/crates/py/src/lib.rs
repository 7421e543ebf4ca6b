//! Python bindings for `dart_core`.
//!
//! Features are 0-based on this side, matching Python indexing. Rich
//! results (test outcomes, experiment reports) are also available as JSON.

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

use dart_core::experiment::{self, ExperimentSpec, Method, Metric, Tuning};
use dart_core::simulation::Setting;
use dart_core::{tuning, ChildCap, DartError};

fn to_py(e: DartError) -> PyErr {
    match e {
        DartError::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
        DartError::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn cap(max_children: Option<usize>) -> PyResult<ChildCap> {
    match max_children {
        None => Ok(ChildCap::Unbounded),
        Some(m) => ChildCap::bounded(m).map_err(to_py),
    }
}

fn pvalues(p: Vec<f64>) -> PyResult<dart_core::PValueVector> {
    dart_core::PValueVector::new(p).map_err(to_py)
}

/// Symmetric feature distance matrix.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct DistanceMatrix {
    inner: dart_core::DistanceMatrix,
}

#[pymethods]
impl DistanceMatrix {
    #[new]
    #[pyo3(signature = (rows, normalize = false))]
    fn new(rows: Vec<Vec<f64>>, normalize: bool) -> PyResult<Self> {
        let inner = dart_core::DistanceMatrix::from_rows(&rows, normalize).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Euclidean distances between planar points.
    #[staticmethod]
    fn euclidean(coords: Vec<(f64, f64)>) -> Self {
        Self {
            inner: dart_core::DistanceMatrix::euclidean(&coords),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn get(&self, i: usize, j: usize) -> PyResult<f64> {
        let m = self.inner.len();
        if i >= m || j >= m {
            return Err(PyValueError::new_err(format!("index out of range for {m} features")));
        }
        Ok(self.inner.get(i, j))
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        self.inner.to_rows()
    }
}

/// Multi-layer aggregation tree.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct AggregationTree {
    inner: dart_core::AggregationTree,
}

#[pymethods]
impl AggregationTree {
    #[getter]
    fn feature_count(&self) -> usize {
        self.inner.feature_count()
    }

    #[getter]
    fn layer_count(&self) -> usize {
        self.inner.layer_count()
    }

    #[getter]
    fn thresholds(&self) -> Vec<f64> {
        self.inner.thresholds().to_vec()
    }

    /// `None` when the child count is unbounded.
    #[getter]
    fn max_children(&self) -> Option<usize> {
        match self.inner.max_children() {
            ChildCap::Bounded(m) => Some(m),
            ChildCap::Unbounded => None,
        }
    }

    /// Feature sets of the nodes on `layer` (1-based), in order.
    fn layer(&self, layer: usize) -> PyResult<Vec<Vec<usize>>> {
        if layer == 0 || layer > self.inner.layer_count() {
            return Err(PyValueError::new_err(format!("layer {layer} does not exist")));
        }
        Ok(self.inner.layer(layer).map(|n| n.features.clone()).collect())
    }

    fn testable_count(&self, layer: usize) -> PyResult<usize> {
        if layer == 0 || layer > self.inner.layer_count() {
            return Err(PyValueError::new_err(format!("layer {layer} does not exist")));
        }
        Ok(self.inner.testable_count(layer))
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = dart_core::AggregationTree::from_json(text).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "AggregationTree(features={}, layers={})",
            self.inner.feature_count(),
            self.inner.layer_count()
        )
    }
}

/// Result of a recursive test.
#[pyclass(frozen, skip_from_py_object)]
struct TestOutcome {
    inner: dart_core::TestOutcome,
}

#[pymethods]
impl TestOutcome {
    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn alpha_m(&self) -> f64 {
        self.inner.alpha_m
    }

    /// Per-layer thresholds, `None` where nothing was tested.
    #[getter]
    fn thresholds(&self) -> Vec<Option<f64>> {
        self.inner.layers.iter().map(|l| l.threshold).collect()
    }

    /// All rejected features, sorted.
    fn rejected(&self) -> Vec<usize> {
        self.inner.rejected()
    }

    fn rejected_through(&self, layer: usize) -> Vec<usize> {
        self.inner.rejected_through(layer)
    }

    /// Features rejected on each layer.
    fn rejected_by_layer(&self) -> Vec<Vec<usize>> {
        self.inner.layers.iter().map(|l| l.rejected_features.clone()).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }
}

/// Summary and per-replication results of a simulation run.
#[pyclass(frozen, skip_from_py_object)]
struct ExperimentReport {
    inner: experiment::ExperimentReport,
}

#[pymethods]
impl ExperimentReport {
    #[getter]
    fn layers(&self) -> usize {
        self.inner.layers
    }

    /// Mean of `metric` ("fdr" or "sensitivity") for `method` ("bh", "dart-L2", ...).
    fn mean(&self, method: &str, alpha: f64, metric: &str) -> PyResult<f64> {
        let (method, metric) = method_metric(method, metric)?;
        self.inner.mean(method, alpha, metric).map_err(to_py)
    }

    fn se(&self, method: &str, alpha: f64, metric: &str) -> PyResult<f64> {
        let (method, metric) = method_metric(method, metric)?;
        self.inner.se(method, alpha, metric).map_err(to_py)
    }

    fn summary_csv(&self) -> PyResult<String> {
        self.inner.summary_csv().map_err(to_py)
    }

    fn records_csv(&self) -> PyResult<String> {
        self.inner.records_csv().map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

fn method_metric(method: &str, metric: &str) -> PyResult<(Method, Metric)> {
    let method: Method = method.parse().map_err(to_py)?;
    let metric = match metric.to_ascii_lowercase().as_str() {
        "fdr" => Metric::Fdr,
        "sensitivity" => Metric::Sensitivity,
        other => return Err(PyValueError::new_err(format!("unknown metric '{other}'"))),
    };
    Ok((method, metric))
}

/// Build a tree from `layers - 1` increasing thresholds.
#[pyfunction]
#[pyo3(signature = (distances, thresholds, max_children = Some(3)))]
fn build_tree(
    distances: &DistanceMatrix,
    thresholds: Vec<f64>,
    max_children: Option<usize>,
) -> PyResult<AggregationTree> {
    let inner = dart_core::build_tree(&distances.inner, cap(max_children)?, thresholds.len() + 1, &thresholds)
        .map_err(to_py)?;
    Ok(AggregationTree { inner })
}

/// Grid-search thresholds for sample size `n`; returns (thresholds, trace CSV).
#[pyfunction]
#[pyo3(signature = (distances, n, layers, max_children = Some(3)))]
fn select_g(
    distances: &DistanceMatrix,
    n: usize,
    layers: usize,
    max_children: Option<usize>,
) -> PyResult<(Vec<f64>, String)> {
    let (g, trace) = tuning::select_g(&distances.inner, n, cap(max_children)?, layers).map_err(to_py)?;
    Ok((g, trace.to_csv().map_err(to_py)?))
}

/// Tree with default child cap, layer count and tuned thresholds.
#[pyfunction]
fn auto_tree(distances: &DistanceMatrix, n: usize) -> PyResult<AggregationTree> {
    let inner = experiment::tune_and_build(&distances.inner, n, &Tuning::Auto).map_err(to_py)?;
    Ok(AggregationTree { inner })
}

#[pyfunction]
fn run_dart(tree: &AggregationTree, pvalues_: Vec<f64>, alpha: f64) -> PyResult<TestOutcome> {
    let inner = dart_core::run_dart(&tree.inner, &pvalues(pvalues_)?, alpha).map_err(to_py)?;
    Ok(TestOutcome { inner })
}

#[pyfunction]
fn run_bh(pvalues_: Vec<f64>, alpha: f64) -> PyResult<Vec<usize>> {
    dart_core::run_bh(&pvalues(pvalues_)?, alpha).map_err(to_py)
}

/// Stouffer combination of p-values.
#[pyfunction]
fn combine_pvalues(pvalues_: Vec<f64>) -> PyResult<f64> {
    dart_core::testing::combine_pvalues(&pvalues_).map_err(to_py)
}

#[pyfunction]
fn alpha_m(m: usize) -> f64 {
    dart_core::testing::alpha_m(m)
}

/// Run a simulation setting ("SE1".."SE5") over `replications` datasets.
#[pyfunction]
#[pyo3(signature = (
    setting, n = 90, m = 100, replications = 200, seed = 0,
    alphas = None, fixed_layout = false, null_signal = false,
))]
#[allow(clippy::too_many_arguments)]
fn run_experiment(
    py: Python<'_>,
    setting: &str,
    n: usize,
    m: usize,
    replications: usize,
    seed: u64,
    alphas: Option<Vec<f64>>,
    fixed_layout: bool,
    null_signal: bool,
) -> PyResult<ExperimentReport> {
    let setting: Setting = setting.parse().map_err(to_py)?;
    let mut spec = ExperimentSpec::new(setting, n, m, seed);
    spec.replications = replications;
    spec.fixed_layout = fixed_layout;
    spec.null_signal = null_signal;
    if let Some(a) = alphas {
        spec.alphas = a;
    }
    let inner = py.detach(|| experiment::run_experiment(&spec)).map_err(to_py)?;
    Ok(ExperimentReport { inner })
}

#[pymodule]
fn dart(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<DistanceMatrix>()?;
    m.add_class::<AggregationTree>()?;
    m.add_class::<TestOutcome>()?;
    m.add_class::<ExperimentReport>()?;
    m.add_function(wrap_pyfunction!(build_tree, m)?)?;
    m.add_function(wrap_pyfunction!(select_g, m)?)?;
    m.add_function(wrap_pyfunction!(auto_tree, m)?)?;
    m.add_function(wrap_pyfunction!(run_dart, m)?)?;
    m.add_function(wrap_pyfunction!(run_bh, m)?)?;
    m.add_function(wrap_pyfunction!(combine_pvalues, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_m, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
