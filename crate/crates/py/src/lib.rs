//! Python bindings: metrics, mapping fits, meta-evaluation, artifacts and the
//! synthetic shape generator. Masks are nested lists; nonzero is foreground.

use std::path::PathBuf;

use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use spe_core::calibration::{self, Family, PairSet};
use spe_core::data::{BinaryMask, Image};
use spe_core::{meta_eval, metrics, synthetic, MetricId};

pyo3::create_exception!(spe, SpeError, PyException);

fn err(e: spe_core::SpeError) -> PyErr {
    SpeError::new_err(e.to_string())
}

fn metric_id(name: &str) -> PyResult<MetricId> {
    name.parse().map_err(err)
}

fn family(name: Option<&str>) -> PyResult<Option<Family>> {
    name.map(|n| n.parse().map_err(err)).transpose()
}

fn grid_shape<T>(rows: &[Vec<T>]) -> PyResult<(usize, usize)> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(SpeError::new_err("rows have different lengths"));
    }
    Ok((h, w))
}

fn to_mask(rows: Vec<Vec<f64>>) -> PyResult<BinaryMask> {
    let (h, w) = grid_shape(&rows)?;
    BinaryMask::new(h, w, rows.into_iter().flatten().map(|v| v != 0.0).collect()).map_err(err)
}

fn from_mask(mask: &BinaryMask) -> Vec<Vec<bool>> {
    mask.bits().chunks(mask.width()).map(<[bool]>::to_vec).collect()
}

fn from_image(image: &Image) -> Vec<Vec<f64>> {
    image.pixels().chunks(image.width()).map(<[f64]>::to_vec).collect()
}

/// Score one prediction against ground truth. Returns None when undefined.
#[pyfunction]
fn metric(name: &str, pred: Vec<Vec<f64>>, gt: Vec<Vec<f64>>) -> PyResult<Option<f64>> {
    let value = metric_id(name)?.evaluate(&to_mask(pred)?, &to_mask(gt)?).map_err(err)?;
    Ok(value.get())
}

/// Mean over the defined per-image scores of a set.
#[pyfunction]
fn evaluate_set(name: &str, preds: Vec<Vec<Vec<f64>>>, gts: Vec<Vec<Vec<f64>>>) -> PyResult<Option<f64>> {
    let preds = preds.into_iter().map(to_mask).collect::<PyResult<Vec<_>>>()?;
    let gts = gts.into_iter().map(to_mask).collect::<PyResult<Vec<_>>>()?;
    Ok(metrics::evaluate_set(metric_id(name)?, &preds, &gts).map_err(err)?.mean)
}

#[pyfunction]
fn mae(real: Vec<f64>, estimated: Vec<f64>) -> PyResult<f64> {
    meta_eval::mae(&real, &estimated).map_err(err)
}

#[pyfunction]
fn correlation(real: Vec<f64>, estimated: Vec<f64>) -> PyResult<f64> {
    meta_eval::correlation(&real, &estimated).map_err(err)
}

/// Fitted mapping from pseudo to real performance.
#[pyclass(name = "Mapping", frozen)]
struct PyMapping {
    inner: calibration::MappingFunction,
}

#[pymethods]
impl PyMapping {
    #[getter]
    fn family(&self) -> String {
        self.inner.family.to_string()
    }

    #[getter]
    fn a(&self) -> f64 {
        self.inner.a
    }

    #[getter]
    fn b(&self) -> f64 {
        self.inner.b
    }

    #[getter]
    fn residual_sse(&self) -> f64 {
        self.inner.residual_sse
    }

    fn apply(&self, x: f64) -> PyResult<f64> {
        self.inner.apply(x).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Mapping(family={}, a={}, b={})", self.inner.family, self.inner.a, self.inner.b)
    }
}

/// Least-squares fit of `real` on `pseudo`. Without `family` the family is
/// selected the same way calibration does.
#[pyfunction]
#[pyo3(signature = (pseudo, real, metric="dice", family=None))]
fn fit_mapping(pseudo: Vec<f64>, real: Vec<f64>, metric: &str, family: Option<&str>) -> PyResult<PyMapping> {
    let psi = PairSet::from_values(metric_id(metric)?, &pseudo, &real).map_err(err)?;
    let chosen = match self::family(family)? {
        Some(f) => f,
        None => calibration::select_family(&psi).map_err(err)?.chosen,
    };
    Ok(PyMapping {
        inner: calibration::fit_mapping(&psi, chosen).map_err(err)?,
    })
}

/// A saved calibration artifact.
#[pyclass(name = "Artifact", frozen)]
struct PyArtifact {
    inner: calibration::CalibrationArtifact,
}

#[pymethods]
impl PyArtifact {
    #[getter]
    fn metric(&self) -> &'static str {
        self.inner.metric.name()
    }

    #[getter]
    fn mapping(&self) -> PyMapping {
        PyMapping { inner: self.inner.mapping }
    }

    #[getter]
    fn pseudo_range(&self) -> (f64, f64) {
        self.inner.pseudo_range()
    }

    #[getter]
    fn pairs(&self) -> Vec<(u32, f64, f64)> {
        self.inner.pair_set.pairs.iter().map(|p| (p.epoch, p.phi_pseudo, p.phi_real)).collect()
    }

    /// Estimated real performance for a pseudo value, clamped to the metric
    /// range. Returns `(estimate, clamped, extrapolated)`.
    fn estimate(&self, phi_pseudo: f64) -> PyResult<(f64, bool, bool)> {
        let (_, est, clamped, extrapolated) =
            spe_core::estimator::estimate_from_pseudo(&self.inner, phi_pseudo).map_err(err)?;
        Ok((est, clamped, extrapolated))
    }

    fn to_json(&self) -> String {
        self.inner.to_canonical_json()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        calibration::save_artifact(&self.inner, &path).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Artifact(metric={}, family={})", self.inner.metric, self.inner.mapping.family)
    }
}

#[pyfunction]
fn load_artifact(path: PathBuf) -> PyResult<PyArtifact> {
    Ok(PyArtifact {
        inner: calibration::load_artifact(&path).map_err(err)?,
    })
}

/// Build an artifact directly from (pseudo, real) pairs.
#[pyfunction]
#[pyo3(signature = (metric, pseudo, real, family=None, support_size=64, n_repeats=6, seed=0))]
fn calibrate_pairs(
    metric: &str,
    pseudo: Vec<f64>,
    real: Vec<f64>,
    family: Option<&str>,
    support_size: usize,
    n_repeats: usize,
    seed: u64,
) -> PyResult<PyArtifact> {
    let psi = PairSet::from_values(metric_id(metric)?, &pseudo, &real).map_err(err)?;
    let options = calibration::CollectOptions {
        support_size,
        n_repeats,
        seed,
        train_cap: None,
    };
    let protocol = calibration::Protocol::from_options(&options, Vec::new());
    let inner = calibration::CalibrationArtifact::build(psi, self::family(family)?, protocol, 0, serde_json::Value::Null)
        .map_err(err)?;
    Ok(PyArtifact { inner })
}

/// `n` synthetic (image, label) pairs as nested lists.
#[pyfunction]
#[pyo3(signature = (n, seed=0))]
fn generate_shapes(n: usize, seed: u64) -> PyResult<Vec<(Vec<Vec<f64>>, Vec<Vec<bool>>)>> {
    let pairs = synthetic::generate_shapes(n, &synthetic::ShapeConfig::default(), seed).map_err(err)?;
    Ok(pairs.iter().map(|p| (from_image(&p.image), from_mask(&p.label))).collect())
}

/// Degrade a mask with the default operators at `level` in [0, 1].
#[pyfunction]
#[pyo3(signature = (mask, level, seed=0))]
fn degrade(mask: Vec<Vec<f64>>, level: f64, seed: u64) -> PyResult<Vec<Vec<bool>>> {
    if !(0.0..=1.0).contains(&level) {
        return Err(SpeError::new_err(format!("level {level} is outside [0, 1]")));
    }
    let spec = synthetic::DegradationSpec::new(level, synthetic::default_operators(), seed);
    Ok(from_mask(&synthetic::degrade(&to_mask(mask)?, &spec)))
}

#[pymodule]
fn spe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", spe_core::VERSION)?;
    m.add("SpeError", m.py().get_type::<SpeError>())?;
    m.add_class::<PyMapping>()?;
    m.add_class::<PyArtifact>()?;
    m.add_function(wrap_pyfunction!(metric, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_set, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(correlation, m)?)?;
    m.add_function(wrap_pyfunction!(fit_mapping, m)?)?;
    m.add_function(wrap_pyfunction!(load_artifact, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(generate_shapes, m)?)?;
    m.add_function(wrap_pyfunction!(degrade, m)?)?;
    Ok(())
}
