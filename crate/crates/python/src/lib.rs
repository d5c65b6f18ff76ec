//! Python bindings for `recency-core`.
//!
//! Structured results (assay truths, calibration estimates, study summaries)
//! cross the boundary as plain dicts built from their serde representation.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;
use serde::Serialize;

use recency_core::assay::{AssayProfile, AssayTruth, BuiltinAssay};
use recency_core::bias;
use recency_core::cross_section::{self, CrossSectionCounts, IncidenceEstimate};
use recency_core::duration::DurationDistribution;
use recency_core::epidemic::{EpidemicScenario, IncidenceTrend};
use recency_core::error::Error;
use recency_core::estimation::{self, GeeFit, GeeOptions, WorkingCorrelation};
use recency_core::external_study::{self, LongInfectedDesign, LongInfectedObs, PanelDataset, PanelDesign};
use recency_core::harness::{self, StudyConfig, ASSUMPTION_EPS};
use recency_core::rng::replicate_rng;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Estimation(_) | Error::Numerical { .. } | Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

fn parse_working(name: &str) -> PyResult<WorkingCorrelation> {
    match name.to_ascii_lowercase().as_str() {
        "exchangeable" => Ok(WorkingCorrelation::Exchangeable),
        "independence" => Ok(WorkingCorrelation::Independence),
        other => Err(PyValueError::new_err(format!(
            "unknown working correlation '{other}' (expected exchangeable or independence)"
        ))),
    }
}

/// A recency-assay profile: probability of testing recent by infection duration.
#[pyclass(name = "Assay", module = "recency", skip_from_py_object)]
#[derive(Clone)]
pub struct PyAssay {
    inner: AssayProfile,
}

#[pymethods]
impl PyAssay {
    /// One of the built-in profiles `1A` .. `2D`.
    #[staticmethod]
    fn builtin(name: &str) -> PyResult<Self> {
        let a: BuiltinAssay = name.parse().map_err(to_py)?;
        Ok(Self { inner: a.profile() })
    }

    #[staticmethod]
    fn builtin_names() -> Vec<&'static str> {
        BuiltinAssay::ALL.iter().map(|a| a.short_name()).collect()
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau()
    }

    #[getter]
    fn t_star(&self) -> f64 {
        self.inner.t_star()
    }

    fn phi(&self, u: f64) -> PyResult<f64> {
        self.inner.phi(u).map_err(to_py)
    }

    /// Mean duration of recency, integrated up to `upper` (default `tau`).
    #[pyo3(signature = (upper=None))]
    fn mean_window(&self, upper: Option<f64>) -> PyResult<f64> {
        self.inner.mean_window(upper.unwrap_or(self.inner.tau())).map_err(to_py)
    }

    fn mdri(&self) -> PyResult<f64> {
        self.inner.mdri().map_err(to_py)
    }

    #[pyo3(signature = (long_dist="uniform"))]
    fn frr(&self, long_dist: &str) -> PyResult<f64> {
        let g = DurationDistribution::preset(long_dist).map_err(to_py)?;
        self.inner.true_frr(&g).map_err(to_py)
    }

    /// Exact summaries as a dict: mu, mdri, frr and both shadows.
    #[pyo3(signature = (upper=None, long_dist="uniform"))]
    fn truth<'py>(&self, py: Python<'py>, upper: Option<f64>, long_dist: &str) -> PyResult<Bound<'py, PyAny>> {
        let g = DurationDistribution::preset(long_dist).map_err(to_py)?;
        let t = AssayTruth::compute(&self.inner, upper.unwrap_or(self.inner.tau()), &g).map_err(to_py)?;
        to_dict(py, &t)
    }

    /// No recency beyond `tau`.
    fn s1_holds(&self) -> bool {
        self.inner.check_assumption_s1(ASSUMPTION_EPS).holds
    }

    /// Constant recency probability on `[t_star, tau]`.
    fn k1_holds(&self) -> bool {
        self.inner.check_assumption_k1(ASSUMPTION_EPS).holds
    }

    fn __repr__(&self) -> String {
        format!("Assay('{}', tau={}, t_star={})", self.inner.name(), self.inner.tau(), self.inner.t_star())
    }
}

/// Incidence and prevalence history ending at the survey time.
#[pyclass(name = "Scenario", module = "recency", skip_from_py_object)]
#[derive(Clone)]
pub struct PyScenario {
    inner: EpidemicScenario,
}

#[pymethods]
impl PyScenario {
    /// Default epidemic with the given trend; pass all three of `lambda0`,
    /// `rho` and `prevalence` to override it.
    #[new]
    #[pyo3(signature = (trend="constant", lambda0=None, rho=None, prevalence=None))]
    fn new(trend: &str, lambda0: Option<f64>, rho: Option<f64>, prevalence: Option<f64>) -> PyResult<Self> {
        let kind: IncidenceTrend = trend.parse().map_err(to_py)?;
        let inner = match (lambda0, rho, prevalence) {
            (None, None, None) => EpidemicScenario::bangkok(kind),
            (Some(l), Some(r), Some(p)) => EpidemicScenario::new(kind, l, r, p).map_err(to_py)?,
            _ => return Err(PyValueError::new_err("give all of lambda0, rho, prevalence or none")),
        };
        Ok(Self { inner })
    }

    #[getter]
    fn trend(&self) -> &'static str {
        self.inner.kind().label()
    }

    #[getter]
    fn lambda0(&self) -> f64 {
        self.inner.lambda0()
    }

    #[getter]
    fn prevalence(&self) -> f64 {
        self.inner.prevalence()
    }

    /// Support bound of the infection-duration distribution, years.
    fn c_t(&self) -> f64 {
        self.inner.c_t()
    }

    fn incidence_at(&self, back: f64) -> PyResult<f64> {
        self.inner.incidence_at(back).map_err(to_py)
    }

    /// Inverse-CDF draw of the duration since infection, `e` in `[0, 1]`.
    fn sample_duration(&self, e: f64) -> PyResult<f64> {
        self.inner.sample_infection_duration(e).map_err(to_py)
    }
}

/// Expected snapshot estimate for a window `mu` integrated to `upper`.
#[pyfunction]
#[pyo3(signature = (assay, scenario, mu=None, upper=None))]
fn expected_snapshot(assay: &PyAssay, scenario: &PyScenario, mu: Option<f64>, upper: Option<f64>) -> PyResult<f64> {
    let upper = upper.unwrap_or(assay.inner.tau());
    let mu = match mu {
        Some(m) => m,
        None => assay.inner.mean_window(upper).map_err(to_py)?,
    };
    bias::expected_snapshot(&assay.inner, &scenario.inner, mu, upper).map_err(to_py)
}

#[pyfunction]
fn expected_adjusted(assay: &PyAssay, scenario: &PyScenario, beta: f64) -> PyResult<f64> {
    bias::expected_adjusted(&assay.inner, &scenario.inner, beta).map_err(to_py)
}

#[pyclass(name = "IncidenceEstimate", module = "recency", frozen)]
pub struct PyEstimate {
    inner: IncidenceEstimate,
}

#[pymethods]
impl PyEstimate {
    #[getter]
    fn estimator(&self) -> &'static str {
        self.inner.estimator.label()
    }

    #[getter]
    fn point(&self) -> f64 {
        self.inner.point
    }

    #[getter]
    fn se(&self) -> f64 {
        self.inner.se
    }

    #[getter]
    fn ci95(&self) -> (f64, f64) {
        self.inner.ci95
    }

    fn covers(&self, truth: f64) -> bool {
        self.inner.covers(truth)
    }

    fn __repr__(&self) -> String {
        format!(
            "IncidenceEstimate({}, point={:.6}, se={:.6})",
            self.inner.estimator.label(),
            self.inner.point,
            self.inner.se
        )
    }
}

#[pyfunction]
#[pyo3(signature = (n_neg, n_pos, n_rec, mu_hat, var_mu=0.0))]
fn snapshot_estimate(n_neg: u64, n_pos: u64, n_rec: u64, mu_hat: f64, var_mu: f64) -> PyResult<PyEstimate> {
    let c = CrossSectionCounts::new(n_neg, n_pos, n_rec).map_err(to_py)?;
    let inner = cross_section::snapshot_estimate(c, mu_hat, var_mu).map_err(to_py)?;
    Ok(PyEstimate { inner })
}

#[pyfunction]
#[pyo3(signature = (n_neg, n_pos, n_rec, omega_hat, beta_hat, var_omega=0.0, var_beta=0.0, t_star=2.0))]
#[allow(clippy::too_many_arguments)]
fn adjusted_estimate(
    n_neg: u64,
    n_pos: u64,
    n_rec: u64,
    omega_hat: f64,
    beta_hat: f64,
    var_omega: f64,
    var_beta: f64,
    t_star: f64,
) -> PyResult<PyEstimate> {
    let c = CrossSectionCounts::new(n_neg, n_pos, n_rec).map_err(to_py)?;
    let inner = cross_section::adjusted_estimate(c, omega_hat, var_omega, beta_hat, var_beta, t_star).map_err(to_py)?;
    Ok(PyEstimate { inner })
}

/// Simulated survey counts `(n_neg, n_pos, n_rec)`.
#[pyfunction]
#[pyo3(signature = (assay, scenario, n=5000, seed=0))]
fn simulate_cross_section(assay: &PyAssay, scenario: &PyScenario, n: u64, seed: u64) -> PyResult<(u64, u64, u64)> {
    let mut rng = replicate_rng(seed, 0);
    let c = cross_section::simulate_cross_section(n, &scenario.inner, &assay.inner, &mut rng).map_err(to_py)?;
    Ok((c.n_neg, c.n_pos, c.n_rec))
}

/// Longitudinal calibration panel, one row per visit.
#[pyclass(name = "Panel", module = "recency", frozen)]
pub struct PyPanel {
    inner: PanelDataset,
}

#[pymethods]
impl PyPanel {
    /// Simulates the default external-study design for `assay`.
    #[staticmethod]
    #[pyo3(signature = (assay, seed=0, n_subjects=None))]
    fn simulate(assay: &PyAssay, seed: u64, n_subjects: Option<usize>) -> PyResult<Self> {
        let mut design = PanelDesign::default();
        if let Some(n) = n_subjects {
            design.n_subjects = n;
        }
        let mut rng = replicate_rng(seed, 0);
        let inner = external_study::simulate_panel(&design, &assay.inner, &mut rng).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Rows as `(subject_id, duration_years, recent)`.
    #[staticmethod]
    fn from_rows(rows: Vec<(u64, f64, bool)>) -> PyResult<Self> {
        let rows = rows
            .into_iter()
            .map(|(subject_id, duration, recent)| external_study::PanelRow { subject_id, duration, recent })
            .collect();
        Ok(Self { inner: PanelDataset::new(rows).map_err(to_py)? })
    }

    #[staticmethod]
    fn read_csv(path: &str) -> PyResult<Self> {
        Ok(Self { inner: PanelDataset::from_path(path).map_err(to_py)? })
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        let f = std::fs::File::create(path).map_err(|e| to_py(e.into()))?;
        self.inner.write_csv(f).map_err(to_py)
    }

    fn rows(&self) -> Vec<(u64, f64, bool)> {
        self.inner.rows().iter().map(|r| (r.subject_id, r.duration, r.recent)).collect()
    }

    #[getter]
    fn n_subjects(&self) -> usize {
        self.inner.n_subjects()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Long-infected sample as `(duration_years, recent)` pairs.
#[pyfunction]
#[pyo3(signature = (assay, seed=0, n=1500, long_dist="uniform"))]
fn simulate_long_infected(assay: &PyAssay, seed: u64, n: usize, long_dist: &str) -> PyResult<Vec<(f64, bool)>> {
    let design = LongInfectedDesign {
        n,
        duration_dist: DurationDistribution::preset(long_dist).map_err(to_py)?,
    };
    let mut rng = replicate_rng(seed, 1);
    let obs = external_study::simulate_long_infected(&design, &assay.inner, &mut rng).map_err(to_py)?;
    Ok(obs.iter().map(|o| (o.duration, o.recent)).collect())
}

#[pyclass(name = "GeeFit", module = "recency", frozen)]
pub struct PyGeeFit {
    inner: GeeFit,
}

fn matrix_rows(m: &nalgebra::Matrix4<f64>) -> Vec<Vec<f64>> {
    (0..4).map(|i| (0..4).map(|j| m[(i, j)]).collect()).collect()
}

#[pymethods]
impl PyGeeFit {
    /// Coefficients of `1, u, u^2, u^3` on the logit scale.
    #[getter]
    fn gamma(&self) -> Vec<f64> {
        self.inner.gamma.iter().copied().collect()
    }

    #[getter]
    fn robust_cov(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.inner.robust_cov)
    }

    #[getter]
    fn naive_cov(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.inner.naive_cov)
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn max_duration(&self) -> f64 {
        self.inner.max_duration
    }

    fn phi_hat(&self, u: f64) -> PyResult<f64> {
        self.inner.phi_hat(u).map_err(to_py)
    }

    /// Window and MDRI estimates with delta-method variances.
    #[pyo3(signature = (t_star=2.0, upper=None))]
    fn window<'py>(&self, py: Python<'py>, t_star: f64, upper: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
        let w = estimation::estimate_window_and_mdri(&self.inner, t_star, upper.unwrap_or(self.inner.max_duration))
            .map_err(to_py)?;
        to_dict(py, &w)
    }
}

#[pyfunction]
#[pyo3(signature = (panel, working="exchangeable"))]
fn fit_gee(panel: &PyPanel, working: &str) -> PyResult<PyGeeFit> {
    let opts = GeeOptions { working: parse_working(working)?, ..GeeOptions::default() };
    let inner = estimation::fit_gee_with(&panel.inner, &opts).map_err(to_py)?;
    Ok(PyGeeFit { inner })
}

/// Fits the panel and estimates the false-recent rate; returns the fit and a
/// dict of `mu_hat`, `omega_hat`, `beta_hat` and their variances.
#[pyfunction]
#[pyo3(signature = (panel, long_sample, t_star=2.0))]
fn calibrate<'py>(
    py: Python<'py>,
    panel: &PyPanel,
    long_sample: Vec<(f64, bool)>,
    t_star: f64,
) -> PyResult<(PyGeeFit, Bound<'py, PyAny>)> {
    let long: Vec<LongInfectedObs> = long_sample
        .into_iter()
        .map(|(duration, recent)| LongInfectedObs { duration, recent })
        .collect();
    let (fit, est) = estimation::calibrate(&panel.inner, &long, t_star).map_err(to_py)?;
    Ok((PyGeeFit { inner: fit }, to_dict(py, &est)?))
}

/// Monte Carlo study configuration.
#[pyclass(name = "StudyConfig", module = "recency", skip_from_py_object)]
#[derive(Clone)]
pub struct PyStudyConfig {
    inner: StudyConfig,
}

#[pymethods]
impl PyStudyConfig {
    #[new]
    #[pyo3(signature = (name, master_seed, assay="1A", trend="constant"))]
    fn new(name: &str, master_seed: u64, assay: &str, trend: &str) -> PyResult<Self> {
        let a: BuiltinAssay = assay.parse().map_err(to_py)?;
        let t: IncidenceTrend = trend.parse().map_err(to_py)?;
        Ok(Self { inner: StudyConfig::new(name, master_seed, a, t) })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self { inner: StudyConfig::from_toml_str(text).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_path(path: &str) -> PyResult<Self> {
        Ok(Self { inner: StudyConfig::from_path(path).map_err(to_py)? })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(to_py)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn master_seed(&self) -> u64 {
        self.inner.master_seed
    }

    #[getter]
    fn get_n_replicates(&self) -> u64 {
        self.inner.n_replicates
    }

    #[setter]
    fn set_n_replicates(&mut self, n: u64) {
        self.inner.n_replicates = n;
    }

    #[getter]
    fn get_n_cross_section(&self) -> u64 {
        self.inner.n_cross_section
    }

    #[setter]
    fn set_n_cross_section(&mut self, n: u64) {
        self.inner.n_cross_section = n;
    }

    #[getter]
    fn true_lambda(&self) -> f64 {
        self.inner.true_lambda()
    }

    fn __repr__(&self) -> String {
        format!("StudyConfig('{}', seed={}, replicates={})", self.inner.name, self.inner.master_seed, self.inner.n_replicates)
    }
}

/// Runs every replicate and returns the summary row as a dict. Pass
/// `with_records=True` to get `(summary, records)`.
#[pyfunction]
#[pyo3(signature = (config, workers=None, with_records=false))]
fn run_study<'py>(
    py: Python<'py>,
    config: &PyStudyConfig,
    workers: Option<usize>,
    with_records: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let result = py.detach(move || harness::run_study(&cfg, workers)).map_err(to_py)?;
    let summary = to_dict(py, &result.summary)?;
    if with_records {
        let records = to_dict(py, &result.records)?;
        Ok((summary, records).into_pyobject(py)?.into_any())
    } else {
        Ok(summary)
    }
}

#[pyfunction]
fn table1_presets() -> Vec<PyStudyConfig> {
    harness::table1_presets().into_iter().map(|inner| PyStudyConfig { inner }).collect()
}

#[pyfunction]
fn table2_presets() -> Vec<PyStudyConfig> {
    harness::table2_presets().into_iter().map(|inner| PyStudyConfig { inner }).collect()
}

#[pymodule]
fn recency(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAssay>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyEstimate>()?;
    m.add_class::<PyPanel>()?;
    m.add_class::<PyGeeFit>()?;
    m.add_class::<PyStudyConfig>()?;
    m.add_function(wrap_pyfunction!(expected_snapshot, m)?)?;
    m.add_function(wrap_pyfunction!(expected_adjusted, m)?)?;
    m.add_function(wrap_pyfunction!(snapshot_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(adjusted_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_cross_section, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_long_infected, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gee, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(run_study, m)?)?;
    m.add_function(wrap_pyfunction!(table1_presets, m)?)?;
    m.add_function(wrap_pyfunction!(table2_presets, m)?)?;
    m.add("ASSUMPTION_EPS", ASSUMPTION_EPS)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn working_names_parse() {
        assert_eq!(parse_working("Exchangeable").unwrap(), WorkingCorrelation::Exchangeable);
        assert_eq!(parse_working("independence").unwrap(), WorkingCorrelation::Independence);
        assert!(parse_working("ar1").is_err());
    }

    #[test]
    fn matrix_rows_are_row_major() {
        let m = nalgebra::Matrix4::from_fn(|i, j| (4 * i + j) as f64);
        let rows = matrix_rows(&m);
        assert_eq!(rows[1][2], 6.0);
        assert_eq!(rows[3][0], 12.0);
    }
}
