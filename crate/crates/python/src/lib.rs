use dml_spss::data::{self, ColumnSchema};
use dml_spss::dml::{self, DmlAlgorithm, ScoreKind};
use dml_spss::learners::LearnerSpec;
use dml_spss::simulate::{self, McConfig, NuisanceLearner, Scenario, ScenarioConfig, Splitter};
use dml_spss::support_points::{self as sp, PointSet, SpConfig};
use dml_spss::{Error, ErrorClass};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;

fn to_py(e: Error) -> PyErr {
    match e.class() {
        ErrorClass::Numeric => PyArithmeticError::new_err(e.to_string()),
        ErrorClass::Config | ErrorClass::Data => PyValueError::new_err(e.to_string()),
    }
}

fn from_name<T: DeserializeOwned>(what: &str, name: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} '{name}'")))
}

fn parse_learner(json: &str) -> PyResult<NuisanceLearner> {
    if json.trim() == "oracle" {
        return Ok(NuisanceLearner::Oracle);
    }
    let spec: LearnerSpec =
        serde_json::from_str(json).map_err(|e| PyValueError::new_err(format!("learner spec: {e}")))?;
    spec.validate().map_err(to_py)?;
    Ok(NuisanceLearner::Spec(spec))
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("rows have unequal lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
}

fn points(rows: &[Vec<f64>]) -> PyResult<PointSet> {
    PointSet::from_rows(rows).map_err(to_py)
}

fn sp_config(seed: u64, max_iter: usize) -> SpConfig {
    SpConfig {
        seed,
        max_iter,
        ..SpConfig::default()
    }
}

/// Outcome `y`, treatment `t` and covariate rows `x`.
#[pyclass(name = "Dataset", module = "dmlspss")]
#[derive(Clone)]
struct PyDataset(data::Dataset);

#[pymethods]
impl PyDataset {
    #[new]
    fn new(y: Vec<f64>, t: Vec<f64>, x: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(PyDataset(data::Dataset::new(y, t, matrix(&x)?).map_err(to_py)?))
    }

    #[staticmethod]
    fn load_csv(path: &str, outcome: &str, treatment: &str, covariates: Vec<String>) -> PyResult<Self> {
        let schema = ColumnSchema {
            outcome: outcome.into(),
            treatment: treatment.into(),
            covariates,
        };
        Ok(PyDataset(data::load_csv(path, &schema).map_err(to_py)?))
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.0.p()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.0.y().to_vec()
    }

    #[getter]
    fn t(&self) -> Vec<f64> {
        self.0.t().to_vec()
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        self.0.x().row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    fn __len__(&self) -> usize {
        self.0.n()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, p={})", self.0.n(), self.0.p())
    }
}

/// Partition of the rows into cross-fitting folds.
#[pyclass(name = "FoldPlan", module = "dmlspss")]
#[derive(Clone)]
struct PyFoldPlan(sp::FoldPlan);

#[pymethods]
impl PyFoldPlan {
    #[new]
    fn new(folds: Vec<Vec<usize>>, n: usize) -> PyResult<Self> {
        Ok(PyFoldPlan(sp::FoldPlan::new(folds, n).map_err(to_py)?))
    }

    #[getter]
    fn folds(&self) -> Vec<Vec<usize>> {
        self.0.folds().to_vec()
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.k()
    }

    fn __repr__(&self) -> String {
        format!("FoldPlan(k={}, n={})", self.0.k(), self.0.n())
    }
}

#[pyclass(name = "DmlEstimate", module = "dmlspss", frozen)]
struct PyDmlEstimate(dml::DmlEstimate);

#[pymethods]
impl PyDmlEstimate {
    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta
    }

    #[getter]
    fn se(&self) -> f64 {
        self.0.se
    }

    #[getter]
    fn sigma_hat(&self) -> f64 {
        self.0.sigma_hat
    }

    #[getter]
    fn ci(&self) -> (f64, f64) {
        (self.0.ci.lo, self.0.ci.hi)
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.k
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n_total
    }

    #[getter]
    fn per_fold_beta(&self) -> Option<Vec<f64>> {
        self.0.per_fold_beta.clone()
    }

    #[getter]
    fn j_hat(&self) -> f64 {
        self.0.j_hat
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("estimate serializes")
    }

    fn __repr__(&self) -> String {
        format!("DmlEstimate(beta={:.6}, se={:.6})", self.0.beta, self.0.se)
    }
}

#[pyclass(name = "SimulationRow", module = "dmlspss", frozen)]
struct PySimulationRow(simulate::SimulationRow);

#[pymethods]
impl PySimulationRow {
    #[getter]
    fn bias(&self) -> f64 {
        self.0.bias
    }

    #[getter]
    fn se(&self) -> f64 {
        self.0.se
    }

    #[getter]
    fn se_adjusted(&self) -> f64 {
        self.0.se_adjusted
    }

    #[getter]
    fn mse(&self) -> f64 {
        self.0.mse
    }

    #[getter]
    fn coverage(&self) -> f64 {
        self.0.coverage
    }

    #[getter]
    fn method(&self) -> String {
        self.0.method.clone()
    }

    #[getter]
    fn reps(&self) -> usize {
        self.0.reps
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("row serializes")
    }

    fn __repr__(&self) -> String {
        format!(
            "SimulationRow({} p={} n={} {} bias={:.4} se={:.4} coverage={:.3})",
            self.0.scenario, self.0.p, self.0.n, self.0.method, self.0.bias, self.0.se, self.0.coverage
        )
    }
}

/// Draws one dataset of a simulation scenario; returns `(dataset, m0, g0)`.
#[pyfunction]
#[pyo3(signature = (scenario, p, n, seed=0))]
fn draw_dataset(scenario: &str, p: usize, n: usize, seed: u64) -> PyResult<(PyDataset, Vec<f64>, Vec<f64>)> {
    let s: Scenario = scenario.parse().map_err(to_py)?;
    let (d, truth) = simulate::draw_dataset(&ScenarioConfig::new(s, p, n), seed).map_err(to_py)?;
    Ok((PyDataset(d), truth.m0, truth.g0))
}

#[pyfunction]
fn energy_distance(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    sp::energy_two_sample(&points(&a)?, &points(&b)?).map_err(to_py)
}

/// Support points of `rows`; returns `(points, objective_trace)`.
#[pyfunction]
#[pyo3(signature = (rows, n_points, seed=0, max_iter=200))]
fn support_points(rows: Vec<Vec<f64>>, n_points: usize, seed: u64, max_iter: usize) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let cfg = SpConfig {
        n_points,
        ..sp_config(seed, max_iter)
    };
    let r = sp::compute_support_points(&points(&rows)?, &cfg).map_err(to_py)?;
    Ok((r.points.to_rows(), r.objective_trace))
}

/// Returns `(test_idx, train_idx)`.
#[pyfunction]
#[pyo3(signature = (dataset, test_fraction=0.2, seed=0, max_iter=200))]
fn spss_split(dataset: &PyDataset, test_fraction: f64, seed: u64, max_iter: usize) -> PyResult<(Vec<usize>, Vec<usize>)> {
    let s = sp::spss_split(&dataset.0, test_fraction, &sp_config(seed, max_iter)).map_err(to_py)?;
    Ok((s.test_idx, s.train_idx))
}

#[pyfunction]
#[pyo3(signature = (n, test_fraction=0.2, seed=0))]
fn random_split(n: usize, test_fraction: f64, seed: u64) -> PyResult<(Vec<usize>, Vec<usize>)> {
    let s = sp::random_split(n, test_fraction, seed).map_err(to_py)?;
    Ok((s.test_idx, s.train_idx))
}

#[pyfunction]
#[pyo3(signature = (dataset, k=2, seed=0, max_iter=200))]
fn spss_kfold(dataset: &PyDataset, k: usize, seed: u64, max_iter: usize) -> PyResult<PyFoldPlan> {
    Ok(PyFoldPlan(sp::spss_kfold(&dataset.0, k, &sp_config(seed, max_iter)).map_err(to_py)?))
}

#[pyfunction]
#[pyo3(signature = (n, k=2, seed=0))]
fn random_kfold(n: usize, k: usize, seed: u64) -> PyResult<PyFoldPlan> {
    Ok(PyFoldPlan(sp::random_kfold(n, k, seed).map_err(to_py)?))
}

/// Cross-fitted estimate. Learners are JSON specs such as
/// `{"kind": "ridge", "lambda": 1.0}`.
#[pyfunction]
#[pyo3(signature = (dataset, plan, learner_m, learner_ell=None, score="partialling_out", algorithm="dml2", alpha=0.05))]
fn estimate(
    dataset: &PyDataset,
    plan: &PyFoldPlan,
    learner_m: &str,
    learner_ell: Option<&str>,
    score: &str,
    algorithm: &str,
    alpha: f64,
) -> PyResult<PyDmlEstimate> {
    let spec = |s: &str| -> PyResult<LearnerSpec> {
        match parse_learner(s)? {
            NuisanceLearner::Spec(l) => Ok(l),
            NuisanceLearner::Oracle => Err(PyValueError::new_err("oracle learners are only available to run_monte_carlo")),
        }
    };
    let lm = spec(learner_m)?;
    let ll = spec(learner_ell.unwrap_or(learner_m))?;
    let kind: ScoreKind = from_name("score", score)?;
    let alg: DmlAlgorithm = from_name("algorithm", algorithm)?;
    let est = dml::estimate(&dataset.0, &plan.0, &lm, &ll, kind, alg, alpha).map_err(to_py)?;
    Ok(PyDmlEstimate(est))
}

/// One Monte Carlo cell. `learner` is a JSON spec or `"oracle"`.
#[pyfunction]
#[pyo3(signature = (scenario, p, n, reps=500, learner="oracle", splitter="spss", k=2, master_seed=0, score="partialling_out", algorithm="dml2", alpha=0.05, sp_max_iter=200))]
#[allow(clippy::too_many_arguments)]
fn run_monte_carlo(
    py: Python<'_>,
    scenario: &str,
    p: usize,
    n: usize,
    reps: usize,
    learner: &str,
    splitter: &str,
    k: usize,
    master_seed: u64,
    score: &str,
    algorithm: &str,
    alpha: f64,
    sp_max_iter: usize,
) -> PyResult<PySimulationRow> {
    let s: Scenario = scenario.parse().map_err(to_py)?;
    let mut mc = McConfig::new(ScenarioConfig::new(s, p, n), parse_learner(learner)?);
    mc.reps = reps;
    mc.splitter = splitter.parse::<Splitter>().map_err(to_py)?;
    mc.k = k;
    mc.master_seed = master_seed;
    mc.score = from_name("score", score)?;
    mc.algorithm = from_name("algorithm", algorithm)?;
    mc.alpha = alpha;
    mc.sp.max_iter = sp_max_iter;
    let row = py.allow_threads(|| simulate::run_monte_carlo(&mc)).map_err(to_py)?;
    Ok(PySimulationRow(row))
}

#[pymodule]
fn dmlspss(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFoldPlan>()?;
    m.add_class::<PyDmlEstimate>()?;
    m.add_class::<PySimulationRow>()?;
    m.add_function(wrap_pyfunction!(draw_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(energy_distance, m)?)?;
    m.add_function(wrap_pyfunction!(support_points, m)?)?;
    m.add_function(wrap_pyfunction!(spss_split, m)?)?;
    m.add_function(wrap_pyfunction!(random_split, m)?)?;
    m.add_function(wrap_pyfunction!(spss_kfold, m)?)?;
    m.add_function(wrap_pyfunction!(random_kfold, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(run_monte_carlo, m)?)?;
    Ok(())
}
