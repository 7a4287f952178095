//! Python bindings. Tensors cross the boundary as flat `float` sequences in
//! `(C, H, W)` order together with a shape tuple; label maps as flat `int`
//! sequences in row-major order.

use proxattack::attacks::{
    alma_prox, binary_search_attack, dag, fmn_linf, pdpgd_linf, AlmaProxConfig, AttackResult, DagConfig, FixedAttack,
    FmnConfig, PdpgdConfig, SEARCH_STEPS,
};
use proxattack::models::{gradcheck, load_model, save_model, AnyModel, PixelAffineModel, TinyConvModel};
use proxattack::prox::{prox_ternary, ProxProblem, DEFAULT_PRECISION};
use proxattack::synth::{fitted_toy_model, synth_sample as core_synth_sample, SynthConfig};
use proxattack::{AttackInput, BinaryMask, LabelMap, RngSeed, SegmentationModel, Shape, TensorGrid};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyString};
use serde::de::DeserializeOwned;
use serde::Serialize;

fn py_err(e: proxattack::Error) -> PyErr {
    use proxattack::Error as E;
    match e {
        E::Io(_) | E::Format(_) | E::PayloadMismatch { .. } => PyIOError::new_err(e.to_string()),
        E::InvalidArgument(_) | E::ShapeMismatch { .. } | E::NonFinite { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for proxattack::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn tensor(data: Vec<f64>, shape: (usize, usize, usize)) -> PyResult<TensorGrid> {
    TensorGrid::new(Shape::new(shape.0, shape.1, shape.2), data).py()
}

fn label_map(labels: Vec<u16>, height: usize, width: usize, num_classes: usize) -> PyResult<LabelMap> {
    LabelMap::new(height, width, num_classes, labels).py()
}

/// Converts keyword arguments holding scalars or strings into a config
/// struct; unknown keys are rejected.
fn config<T: DeserializeOwned + Serialize + Default>(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    let mut map = serde_json::Map::new();
    if let Some(kw) = kwargs {
        for (k, v) in kw.iter() {
            let key: String = k.extract()?;
            let value = if v.is_instance_of::<PyBool>() {
                serde_json::Value::from(v.extract::<bool>()?)
            } else if v.is_instance_of::<PyInt>() {
                serde_json::Value::from(v.extract::<i64>()?)
            } else if v.is_instance_of::<PyFloat>() {
                serde_json::Value::from(v.extract::<f64>()?)
            } else if v.is_instance_of::<PyString>() {
                serde_json::Value::from(v.extract::<String>()?)
            } else if v.is_none() {
                serde_json::Value::Null
            } else {
                return Err(PyValueError::new_err(format!("unsupported value for `{key}`")));
            };
            map.insert(key, value);
        }
    }
    let known = serde_json::to_value(T::default()).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    if let Some(obj) = known.as_object() {
        if let Some(k) = map.keys().find(|k| !obj.contains_key(*k)) {
            return Err(PyValueError::new_err(format!("unknown option `{k}`")));
        }
    }
    serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Segmentation model with call counters.
#[pyclass(name = "Model", module = "proxattack_py", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: AnyModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: load_model(path).py()? })
    }

    #[staticmethod]
    #[pyo3(signature = (input_shape, num_classes, seed=0))]
    fn random_affine(input_shape: (usize, usize, usize), num_classes: usize, seed: u64) -> PyResult<Self> {
        let s = Shape::new(input_shape.0, input_shape.1, input_shape.2);
        let m = PixelAffineModel::random(s, num_classes, RngSeed(seed)).py()?;
        Ok(Self { inner: m.into() })
    }

    #[staticmethod]
    #[pyo3(signature = (input_shape, hidden, num_classes, seed=0))]
    fn random_tiny_conv(input_shape: (usize, usize, usize), hidden: usize, num_classes: usize, seed: u64) -> PyResult<Self> {
        let s = Shape::new(input_shape.0, input_shape.1, input_shape.2);
        let m = TinyConvModel::random(s, hidden, num_classes, RngSeed(seed)).py()?;
        Ok(Self { inner: m.into() })
    }

    /// A small convolutional model fitted on synthetic 3×16×16 images with
    /// three classes. Returns `(model, train_accuracy)`.
    #[staticmethod]
    #[pyo3(signature = (seed=0, train=8))]
    fn fitted_toy(seed: u64, train: usize) -> PyResult<(Self, f64)> {
        let (m, report) = fitted_toy_model(&SynthConfig::default(), train, RngSeed(seed)).py()?;
        Ok((Self { inner: m.into() }, report.accuracy))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_model(path, &self.inner).py()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn input_shape(&self) -> (usize, usize, usize) {
        let s = self.inner.input_shape();
        (s.channels, s.height, s.width)
    }

    #[getter]
    fn forwards(&self) -> u64 {
        self.inner.counters().forwards()
    }

    #[getter]
    fn backwards(&self) -> u64 {
        self.inner.counters().backwards()
    }

    fn reset_counters(&self) {
        self.inner.counters().reset();
    }

    /// Flat logits of shape `(K, H, W)`.
    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = tensor(x, self.input_shape())?;
        Ok(self.inner.forward(&x).py()?.into_data())
    }

    fn vjp(&self, x: Vec<f64>, upstream: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = tensor(x, self.input_shape())?;
        let s = self.inner.output_shape();
        let u = tensor(upstream, (s.channels, s.height, s.width))?;
        Ok(self.inner.vjp(&x, &u).py()?.into_data())
    }

    /// Largest relative error between `vjp` and central differences.
    #[pyo3(signature = (x, tolerance=1e-4, coordinates=32, seed=0))]
    fn gradcheck(&self, x: Vec<f64>, tolerance: f64, coordinates: usize, seed: u64) -> PyResult<(f64, bool)> {
        let x = tensor(x, self.input_shape())?;
        let r = gradcheck(&self.inner, &x, tolerance, coordinates, RngSeed(seed)).py()?;
        Ok((r.max_rel_error, r.passed))
    }
}

/// Outcome of a minimal-norm attack.
#[pyclass(name = "AttackResult", module = "proxattack_py", get_all)]
struct PyAttackResult {
    delta: Vec<f64>,
    norm: f64,
    success: bool,
    forwards: u64,
    backwards: u64,
    iterations: usize,
    /// `(iteration, apsr, norm)` per evaluated iterate.
    trace: Vec<(usize, f64, f64)>,
}

#[pymethods]
impl PyAttackResult {
    fn __repr__(&self) -> String {
        format!(
            "AttackResult(norm={:.6}, success={}, iterations={})",
            self.norm,
            if self.success { "True" } else { "False" },
            self.iterations
        )
    }
}

impl From<AttackResult> for PyAttackResult {
    fn from(r: AttackResult) -> Self {
        Self {
            trace: r.trace.iter().map(|t| (t.iteration, t.apsr, t.norm)).collect(),
            delta: r.best_delta.into_data(),
            norm: r.best_norm,
            success: r.success,
            forwards: r.forwards,
            backwards: r.backwards,
            iterations: r.iterations,
        }
    }
}

fn attack_input(model: &PyModel, x: Vec<f64>, labels: Vec<u16>, mask: Option<Vec<bool>>, targeted: bool) -> PyResult<AttackInput> {
    let (c, h, w) = model.input_shape();
    let x = tensor(x, (c, h, w))?;
    let labels = label_map(labels, h, w, model.num_classes())?;
    let mask = match mask {
        Some(bits) => BinaryMask::new(h, w, bits).py()?,
        None => BinaryMask::full(h, w),
    };
    AttackInput::new(x, labels, mask, targeted).py()
}

type Input = (Vec<f64>, Vec<u16>, Option<Vec<bool>>, bool);

fn run_attack<C>(
    py: Python<'_>,
    model: &PyModel,
    input: Input,
    kwargs: Option<&Bound<'_, PyDict>>,
    f: impl Fn(&AnyModel, &AttackInput, &C) -> proxattack::Result<AttackResult> + Send + Sync,
) -> PyResult<PyAttackResult>
where
    C: DeserializeOwned + Serialize + Default + Send + Sync,
{
    let cfg: C = config(kwargs)?;
    let input = attack_input(model, input.0, input.1, input.2, input.3)?;
    let m = &model.inner;
    Ok(py.detach(|| f(m, &input, &cfg)).py()?.into())
}

/// Minimal `ℓ∞` perturbation by the proximal augmented-Lagrangian attack.
/// Keyword arguments override fields of the default configuration.
#[pyfunction]
#[pyo3(name = "alma_prox", signature = (model, x, labels, mask=None, targeted=false, **kwargs))]
fn py_alma_prox(
    py: Python<'_>,
    model: &PyModel,
    x: Vec<f64>,
    labels: Vec<u16>,
    mask: Option<Vec<bool>>,
    targeted: bool,
    kwargs: Option<&Bound<'_, PyDict>>,
) -> PyResult<PyAttackResult> {
    run_attack(py, model, (x, labels, mask, targeted), kwargs, |m, i, c: &AlmaProxConfig| alma_prox(m, i, c))
}

#[pyfunction]
#[pyo3(name = "dag", signature = (model, x, labels, mask=None, targeted=false, **kwargs))]
fn py_dag(
    py: Python<'_>,
    model: &PyModel,
    x: Vec<f64>,
    labels: Vec<u16>,
    mask: Option<Vec<bool>>,
    targeted: bool,
    kwargs: Option<&Bound<'_, PyDict>>,
) -> PyResult<PyAttackResult> {
    run_attack(py, model, (x, labels, mask, targeted), kwargs, |m, i, c: &DagConfig| dag(m, i, c))
}

#[pyfunction]
#[pyo3(name = "fmn", signature = (model, x, labels, mask=None, targeted=false, **kwargs))]
fn py_fmn(
    py: Python<'_>,
    model: &PyModel,
    x: Vec<f64>,
    labels: Vec<u16>,
    mask: Option<Vec<bool>>,
    targeted: bool,
    kwargs: Option<&Bound<'_, PyDict>>,
) -> PyResult<PyAttackResult> {
    run_attack(py, model, (x, labels, mask, targeted), kwargs, |m, i, c: &FmnConfig| fmn_linf(m, i, c))
}

#[pyfunction]
#[pyo3(name = "pdpgd", signature = (model, x, labels, mask=None, targeted=false, **kwargs))]
fn py_pdpgd(
    py: Python<'_>,
    model: &PyModel,
    x: Vec<f64>,
    labels: Vec<u16>,
    mask: Option<Vec<bool>>,
    targeted: bool,
    kwargs: Option<&Bound<'_, PyDict>>,
) -> PyResult<PyAttackResult> {
    run_attack(py, model, (x, labels, mask, targeted), kwargs, |m, i, c: &PdpgdConfig| pdpgd_linf(m, i, c))
}

/// Binary search over the budget of a fixed-`ε` attack: `"ifgsm"`,
/// `"mifgsm"`, `"pgd_ce"` or `"pgd_dlr"`.
#[pyfunction]
#[pyo3(signature = (model, x, labels, attack="pgd_ce", mask=None, targeted=false, steps=40, restarts=1, decay=1.0, search_steps=SEARCH_STEPS, nu=0.99, seed=0))]
#[allow(clippy::too_many_arguments)]
fn binary_search(
    py: Python<'_>,
    model: &PyModel,
    x: Vec<f64>,
    labels: Vec<u16>,
    attack: &str,
    mask: Option<Vec<bool>>,
    targeted: bool,
    steps: usize,
    restarts: usize,
    decay: f64,
    search_steps: usize,
    nu: f64,
    seed: u64,
) -> PyResult<PyAttackResult> {
    use proxattack::attacks::{FixedLoss, PgdConfig};
    let pgd = |loss| FixedAttack::Pgd(PgdConfig { loss, steps, restarts, seed });
    let inner = match attack {
        "ifgsm" => FixedAttack::Ifgsm { steps },
        "mifgsm" => FixedAttack::Mifgsm { steps, decay },
        "pgd_ce" => pgd(FixedLoss::Ce),
        "pgd_dlr" => pgd(FixedLoss::Dlr),
        other => return Err(PyValueError::new_err(format!("unknown attack `{other}`"))),
    };
    inner.validate(nu).py()?;
    let input = attack_input(model, x, labels, mask, targeted)?;
    let m = &model.inner;
    Ok(py.detach(|| binary_search_attack(m, &input, &inner, search_steps, nu)).py()?.into())
}

/// Proximity operator of `λ‖·‖∞` plus the box `[-anchor, 1 - anchor]`,
/// optionally in the diagonal metric `metric`.
#[pyfunction]
#[pyo3(signature = (delta, anchor, lam, metric=None, precision=DEFAULT_PRECISION))]
fn prox_linf(delta: Vec<f64>, anchor: Vec<f64>, lam: f64, metric: Option<Vec<f64>>, precision: f64) -> PyResult<Vec<f64>> {
    let n = delta.len();
    let mut p = ProxProblem::new(tensor(delta, (1, 1, n))?, tensor(anchor, (1, 1, n))?, lam).py()?;
    if let Some(m) = metric {
        p = p.with_metric(tensor(m, (1, 1, n))?).py()?;
    }
    p = p.with_precision(precision).py()?;
    Ok(prox_ternary(&p).solution.into_data())
}

/// Average pixel success rate of `logits` (flat, `(K, H, W)`).
#[pyfunction]
#[pyo3(signature = (logits, labels, shape, mask=None, targeted=false))]
fn apsr(logits: Vec<f64>, labels: Vec<u16>, shape: (usize, usize, usize), mask: Option<Vec<bool>>, targeted: bool) -> PyResult<f64> {
    let (k, h, w) = shape;
    let logits = tensor(logits, shape)?;
    let labels = label_map(labels, h, w, k)?;
    let mask = match mask {
        Some(bits) => BinaryMask::new(h, w, bits).py()?,
        None => BinaryMask::full(h, w),
    };
    proxattack::bench::apsr(&logits, &labels, &mask, targeted).py()
}

/// One synthetic sample `(x, labels, mask)` of the default 3×16×16 layout.
#[pyfunction]
#[pyo3(signature = (seed, **kwargs))]
fn synth_sample(seed: u64, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<(Vec<f64>, Vec<u16>, Vec<bool>)> {
    let cfg: SynthConfig = config(kwargs)?;
    let s = core_synth_sample(&cfg, RngSeed(seed)).py()?;
    Ok((s.x.into_data(), s.labels.labels().to_vec(), s.mask.bits().to_vec()))
}

#[pymodule]
fn proxattack_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyAttackResult>()?;
    m.add_function(wrap_pyfunction!(py_alma_prox, m)?)?;
    m.add_function(wrap_pyfunction!(py_dag, m)?)?;
    m.add_function(wrap_pyfunction!(py_fmn, m)?)?;
    m.add_function(wrap_pyfunction!(py_pdpgd, m)?)?;
    m.add_function(wrap_pyfunction!(binary_search, m)?)?;
    m.add_function(wrap_pyfunction!(prox_linf, m)?)?;
    m.add_function(wrap_pyfunction!(apsr, m)?)?;
    m.add_function(wrap_pyfunction!(synth_sample, m)?)?;
    Ok(())
}
