use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use apw::datasets::{self, GaussianSpec, NoiseKind, NoiseSpec};
use apw::pd::{self, CheckpointSeries};
use apw::rng::{stream, Stream};
use apw::runner::{self, ExperimentConfig};
use apw::scheduler::{self, LossVector, SampleWeights};
use apw::{theory, variants, Error, SchedulerConfig};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::MissingArtifact(_) => PyOSError::new_err(e.to_string()),
        Error::Numeric(_) | Error::Diverged { .. } | Error::Generation(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Per-epoch scheduler record.
#[pyclass(name = "EpochUpdate", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyEpochUpdate {
    #[pyo3(get)]
    rho_raw: f64,
    #[pyo3(get)]
    rho_clipped: f64,
    #[pyo3(get)]
    gamma: f64,
    #[pyo3(get)]
    alpha: f64,
    #[pyo3(get)]
    z: f64,
    #[pyo3(get)]
    clipped: bool,
}

impl From<apw::EpochUpdate> for PyEpochUpdate {
    fn from(u: apw::EpochUpdate) -> Self {
        Self {
            rho_raw: u.rho_raw,
            rho_clipped: u.rho_clipped,
            gamma: u.gamma,
            alpha: u.alpha,
            z: u.z,
            clipped: u.clipped,
        }
    }
}

#[pymethods]
impl PyEpochUpdate {
    fn __repr__(&self) -> String {
        format!(
            "EpochUpdate(rho_raw={}, rho_clipped={}, gamma={}, alpha={}, z={}, clipped={})",
            self.rho_raw, self.rho_clipped, self.gamma, self.alpha, self.z, self.clipped
        )
    }
}

/// Error threshold `e`, stabilizer `q`, phase threshold `tau` and the clip range of
/// the hard-sample mass.
#[pyclass(name = "Scheduler", frozen)]
struct PyScheduler {
    inner: SchedulerConfig,
}

#[pymethods]
impl PyScheduler {
    #[new]
    #[pyo3(signature = (e, q, tau = 0.5, rho_clip = (1e-4, 1.0 - 1e-4)))]
    fn new(e: f64, q: f64, tau: f64, rho_clip: (f64, f64)) -> PyResult<Self> {
        let inner = SchedulerConfig::new(e, q)
            .and_then(|c| c.with_tau(tau))
            .and_then(|c| c.with_rho_clip(rho_clip.0, rho_clip.1))
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn e(&self) -> f64 {
        self.inner.e
    }

    #[getter]
    fn q(&self) -> f64 {
        self.inner.q
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau
    }

    /// Weight change for a hard-sample mass `rho`, as `(alpha, gamma, rho_clipped, clipped)`.
    fn weight_change(&self, rho: f64) -> PyResult<(f64, f64, f64, bool)> {
        let c = scheduler::weight_change(rho, &self.inner).map_err(to_py)?;
        Ok((c.alpha, c.gamma, c.rho_clipped, c.clipped))
    }

    /// One epoch update: returns the new weights, the update record and the
    /// difficulty signs (+1 easy, -1 hard).
    fn step(&self, weights: Vec<f64>, losses: Vec<f64>) -> PyResult<(Vec<f64>, PyEpochUpdate, Vec<i8>)> {
        let w = SampleWeights::new(weights).map_err(to_py)?;
        let l = LossVector::new(losses).map_err(to_py)?;
        let (w, update, beta) = scheduler::epoch_step(&w, &l, &self.inner).map_err(to_py)?;
        Ok((w.into_inner(), update.into(), beta.signs()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Scheduler(e={}, q={}, tau={}, rho_clip={:?})",
            self.inner.e, self.inner.q, self.inner.tau, self.inner.rho_clip
        )
    }
}

/// Difficulty signs for `losses` at threshold `e` (+1 easy, -1 hard).
#[pyfunction]
fn mark_difficulty(losses: Vec<f64>, e: f64) -> PyResult<Vec<i8>> {
    Ok(scheduler::mark_difficulty(&losses, e).map_err(to_py)?.signs())
}

/// Proportion of samples with loss at or below `threshold`.
#[pyfunction]
fn eprop(losses: Vec<f64>, threshold: f64) -> PyResult<f64> {
    theory::eprop(&losses, threshold).map_err(to_py)
}

/// Threshold from the label-noise estimate; `kind` is "none", "inherent" or "synthetic".
#[pyfunction]
#[pyo3(signature = (kind = "none", p = 0.0))]
fn default_threshold(kind: &str, p: f64) -> PyResult<f64> {
    let kind = match kind {
        "none" => NoiseKind::None,
        "inherent" => NoiseKind::Inherent,
        "synthetic" => NoiseKind::Synthetic,
        other => return Err(PyValueError::new_err(format!("unknown noise kind {other:?}"))),
    };
    datasets::default_threshold(NoiseSpec::new(kind, p).map_err(to_py)?).map_err(to_py)
}

/// `(lambda_i, lambda_j)` for a weighted mixup pair.
#[pyfunction]
fn mapw_coefficients(w_i: f64, w_j: f64) -> PyResult<(f64, f64)> {
    let c = variants::mapw_coefficients(w_i, w_j).map_err(to_py)?;
    Ok((c.lambda_i, c.lambda_j))
}

#[pyfunction]
fn cosine_dissimilarity(u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    pd::cosine_dissimilarity(&u, &v).map_err(to_py)
}

/// Phase transition of a checkpoint series: `(t_star, e_estimate, profile)`.
#[pyfunction]
#[pyo3(signature = (checkpoints, losses = None))]
fn detect_transition(checkpoints: Vec<Vec<f64>>, losses: Option<Vec<f64>>) -> PyResult<(usize, Option<f64>, Vec<f64>)> {
    let series = CheckpointSeries::new(checkpoints, losses).map_err(to_py)?;
    let r = pd::analyze(&series);
    Ok((r.t_star, r.e_estimate, r.d_profile))
}

/// Two-class Gaussian dataset, linearly separable, from the seed's data stream.
/// Returns `(rows, labels)`.
#[pyfunction]
#[pyo3(signature = (seed, n = 600, dim = 2, std = 1.5))]
fn gaussian_dataset(seed: u64, n: usize, dim: usize, std: f64) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let spec = GaussianSpec {
        n,
        dim,
        std,
        ..GaussianSpec::default()
    };
    let ds = datasets::gen_gaussian_2class(&spec, &mut stream(seed, Stream::Data)).map_err(to_py)?;
    let rows = (0..ds.len()).map(|i| ds.x.row(i).to_vec()).collect();
    Ok((rows, ds.y))
}

/// Runs an experiment from a JSON config and returns the summary as JSON.
#[pyfunction]
#[pyo3(signature = (config_json, output_dir = None))]
fn run_experiment(py: Python<'_>, config_json: &str, output_dir: Option<PathBuf>) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(to_py)?;
    let out = output_dir.unwrap_or_else(|| cfg.resolved_output_dir());
    let summary = py
        .detach(|| runner::run_experiment(&cfg, &out))
        .map_err(to_py)?;
    serde_json::to_string_pretty(&summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Re-checks the bounds stored under an experiment or seed directory.
/// Returns `(passed, failure_count)`.
#[pyfunction]
fn verify(dir: PathBuf) -> PyResult<(bool, usize)> {
    let reports = runner::verify_dir(&dir).map_err(to_py)?;
    let failures: usize = reports.iter().map(|(_, r)| r.failures().count()).sum();
    Ok((failures == 0, failures))
}

#[pymodule]
fn apw_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScheduler>()?;
    m.add_class::<PyEpochUpdate>()?;
    m.add_function(wrap_pyfunction!(mark_difficulty, m)?)?;
    m.add_function(wrap_pyfunction!(eprop, m)?)?;
    m.add_function(wrap_pyfunction!(default_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(mapw_coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_dissimilarity, m)?)?;
    m.add_function(wrap_pyfunction!(detect_transition, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
