//! Python bindings: `import nonlocal_lab`.
//!
//! Vectors cross the boundary as lists of floats; reports come back as plain
//! dicts (the same shape the CLI writes to JSON).

use std::sync::Arc;

use nalgebra::DVector;
use nonlocal_core::equilibria;
use nonlocal_core::evolve::{self as dynamics, IntegratorConfig, Scheme, Trajectory};
use nonlocal_core::reaction::{LogisticReaction, Reaction};
use nonlocal_core::spectral::{self, Method};
use nonlocal_core::verify::{self, Suite, SystemSampler};
use nonlocal_core::{Kernel as CoreKernel, KernelLaw, MeasureSpace as CoreSpace, NonlocalOperator, QuadratureRule};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn err(e: nonlocal_core::Error) -> PyErr {
    if e.is_precondition() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse<T: std::str::FromStr<Err = nonlocal_core::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

fn vector(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

fn list(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

#[pyclass(module = "nonlocal_lab", frozen)]
#[derive(Clone)]
struct MeasureSpace(Arc<CoreSpace>);

#[pymethods]
impl MeasureSpace {
    /// `n` cells on `[a, b]`; `rule` is "midpoint" or "trapezoid".
    #[staticmethod]
    #[pyo3(signature = (a, b, n, rule = "midpoint"))]
    fn interval(a: f64, b: f64, n: usize, rule: &str) -> PyResult<Self> {
        let rule = match rule {
            "midpoint" => QuadratureRule::Midpoint,
            "trapezoid" => QuadratureRule::Trapezoid,
            other => return Err(PyValueError::new_err(format!("unknown quadrature rule `{other}`"))),
        };
        Ok(Self(Arc::new(CoreSpace::interval(a, b, n, rule).map_err(err)?)))
    }

    /// Weighted graph with shortest-path metric; `edges` are `(u, v, length)`.
    #[staticmethod]
    fn graph(vertices: usize, edges: Vec<(usize, usize, f64)>, measures: Vec<f64>) -> PyResult<Self> {
        Ok(Self(Arc::new(CoreSpace::graph(vertices, &edges, measures).map_err(err)?)))
    }

    /// Points in `R^dim`, coordinates flattened row-major.
    #[staticmethod]
    fn from_points(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> PyResult<Self> {
        Ok(Self(Arc::new(CoreSpace::from_points(dim, coords, weights).map_err(err)?)))
    }

    fn union(&self, other: &MeasureSpace) -> PyResult<Self> {
        Ok(Self(Arc::new(self.0.union(&other.0).map_err(err)?)))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.0.weights().to_vec()
    }

    #[getter]
    fn positions(&self) -> Vec<f64> {
        (0..self.0.len()).map(|i| self.0.position(i)).collect()
    }

    #[getter]
    fn total_measure(&self) -> f64 {
        self.0.total_measure()
    }

    fn distance(&self, i: usize, j: usize) -> PyResult<f64> {
        if i >= self.0.len() || j >= self.0.len() {
            return Err(PyValueError::new_err("node index out of range"));
        }
        Ok(self.0.distance(i, j))
    }

    fn is_r_connected(&self, py: Python<'_>, r: f64) -> PyResult<PyObject> {
        to_py(py, &self.0.is_r_connected(r).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!("MeasureSpace(nodes={}, measure={})", self.0.len(), self.0.total_measure())
    }
}

#[pyclass(module = "nonlocal_lab", frozen)]
#[derive(Clone)]
struct Kernel(CoreKernel);

impl Kernel {
    fn assemble(space: &MeasureSpace, law: KernelLaw) -> PyResult<Self> {
        Ok(Self(CoreKernel::assemble(space.0.clone(), &law).map_err(err)?))
    }
}

#[pymethods]
impl Kernel {
    #[staticmethod]
    fn constant(space: &MeasureSpace, c: f64) -> PyResult<Self> {
        Self::assemble(space, KernelLaw::Constant { c })
    }

    #[staticmethod]
    fn tophat(space: &MeasureSpace, radius: f64, height: f64) -> PyResult<Self> {
        Self::assemble(space, KernelLaw::Tophat { radius, height })
    }

    #[staticmethod]
    fn gaussian(space: &MeasureSpace, sigma: f64, scale: f64) -> PyResult<Self> {
        Self::assemble(space, KernelLaw::Gaussian { sigma, scale })
    }

    /// Nonnegative `n × n` table of kernel values `J(x_i, x_j)`.
    #[staticmethod]
    fn table(space: &MeasureSpace, rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(PyValueError::new_err("kernel table must be square"));
        }
        Self::assemble(space, KernelLaw::Table { values: rows.concat() })
    }

    #[getter]
    fn space(&self) -> MeasureSpace {
        MeasureSpace(self.0.space().clone())
    }

    #[getter]
    fn is_symmetric(&self) -> bool {
        self.0.is_symmetric()
    }

    /// `h0(x) = ∫ J(x, y) dy`.
    #[getter]
    fn h0(&self) -> Vec<f64> {
        list(&self.0.h0())
    }

    fn matrix(&self) -> Vec<Vec<f64>> {
        let j = self.0.jmat();
        j.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    /// `(Ku)(x_i) = Σ_j J(x_i, x_j) u_j w_j`.
    fn apply(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(list(&self.0.apply(&vector(u)).map_err(err)?))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// `L u = K u - h u`.
#[pyclass(module = "nonlocal_lab", frozen)]
#[derive(Clone)]
struct Operator(NonlocalOperator);

#[pymethods]
impl Operator {
    /// With `h` omitted the potential is `h0 + offset`.
    #[new]
    #[pyo3(signature = (kernel, h = None, offset = 0.0))]
    fn new(kernel: &Kernel, h: Option<Vec<f64>>, offset: f64) -> PyResult<Self> {
        let op = match h {
            Some(h) => NonlocalOperator::new(kernel.0.clone(), vector(h)),
            None => NonlocalOperator::with_h0_offset(kernel.0.clone(), offset),
        };
        Ok(Self(op.map_err(err)?))
    }

    #[getter]
    fn kernel(&self) -> Kernel {
        Kernel(self.0.kernel().clone())
    }

    #[getter]
    fn h(&self) -> Vec<f64> {
        list(self.0.h())
    }

    #[getter]
    fn h0(&self) -> Vec<f64> {
        list(self.0.h0())
    }

    fn apply(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(list(&self.0.apply(&vector(u)).map_err(err)?))
    }

    /// Principal value `Λ` and eigenfunction; `method` in auto, dense, power, rayleigh.
    #[pyo3(signature = (method = "auto"))]
    fn principal_value(&self, py: Python<'_>, method: &str) -> PyResult<PyObject> {
        let m: Method = parse(method)?;
        to_py(py, &spectral::principal_value(&self.0, m).map_err(err)?)
    }

    /// Collatz–Wielandt bounds `inf (Lφ)/φ ≤ Λ ≤ sup (Lφ)/φ` for a positive `φ`.
    fn cw_bounds(&self, py: Python<'_>, phi: Vec<f64>) -> PyResult<PyObject> {
        to_py(py, &spectral::cw_bounds(&self.0, &vector(phi)).map_err(err)?)
    }

    fn sign_criteria(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_py(py, &spectral::sign_criteria(&self.0).map_err(err)?)
    }

    /// `e^{tL} u0`.
    fn semigroup(&self, t: f64, u0: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(list(&dynamics::linear_semigroup_apply(&self.0, t, &vector(u0)).map_err(err)?))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(module = "nonlocal_lab", frozen)]
#[derive(Clone)]
struct ReactionLaw(Reaction);

#[pymethods]
impl ReactionLaw {
    #[staticmethod]
    fn zero() -> Self {
        Self(Reaction::zero())
    }

    /// `offset + slope · s`.
    #[staticmethod]
    fn affine(offset: Vec<f64>, slope: Vec<f64>) -> PyResult<Self> {
        Ok(Self(Reaction::affine(vector(offset), vector(slope)).map_err(err)?))
    }

    /// `g + n s - m |s|^{rho-1} s` with per-node coefficients.
    #[staticmethod]
    fn logistic(g: Vec<f64>, n: Vec<f64>, m: Vec<f64>, rho: f64) -> PyResult<Self> {
        let l = LogisticReaction::new(vector(g), vector(n), vector(m), rho).map_err(err)?;
        Ok(Self(Reaction::logistic(l)))
    }

    /// Logistic law with the same coefficients at every one of `nodes`.
    #[staticmethod]
    fn logistic_uniform(nodes: usize, g: f64, n: f64, m: f64, rho: f64) -> PyResult<Self> {
        Ok(Self(Reaction::logistic(LogisticReaction::uniform(nodes, g, n, m, rho).map_err(err)?)))
    }

    /// `Σ_k c_k s^k`.
    #[staticmethod]
    fn polynomial(coeffs: Vec<f64>) -> Self {
        Self(Reaction::polynomial(coeffs))
    }

    /// `λ s (1 - s²)`.
    #[staticmethod]
    fn bistable(lambda: f64) -> Self {
        Self(equilibria::bistable_cubic(lambda))
    }

    /// Adds the node-dependent source `d(x)`.
    fn with_source(&self, d: Vec<f64>) -> PyResult<Self> {
        Ok(Self(self.0.with_source(vector(d)).map_err(err)?))
    }

    fn truncate(&self, k: f64) -> PyResult<Self> {
        Ok(Self(self.0.truncate(k).map_err(err)?))
    }

    fn __call__(&self, node: usize, s: f64) -> f64 {
        self.0.eval(node, s)
    }

    #[getter]
    fn kind(&self) -> String {
        format!("{:?}", self.0.kind())
    }
}

/// Integrates `u_t = Ku - hu + f(x, u)`; returns the trajectory as a dict.
#[pyfunction]
#[pyo3(signature = (op, f, u0, scheme = "euler_op", dt = 0.01, t_end = 1.0, record_every = 1, beta = None))]
#[allow(clippy::too_many_arguments)]
fn evolve(
    py: Python<'_>,
    op: &Operator,
    f: &ReactionLaw,
    u0: Vec<f64>,
    scheme: &str,
    dt: f64,
    t_end: f64,
    record_every: usize,
    beta: Option<f64>,
) -> PyResult<PyObject> {
    let scheme: Scheme = parse(scheme)?;
    let mut cfg = IntegratorConfig::new(scheme, dt, t_end).map_err(err)?.with_record_every(record_every);
    if let Some(b) = beta {
        cfg = cfg.with_beta(b);
    }
    let tr = py.allow_threads(|| dynamics::evolve_nonlinear(&op.0, &f.0, &vector(u0), &cfg)).map_err(err)?;
    to_py(py, &tr)
}

/// Comparison with the scalar blow-up ODE for `f = |u|^{rho-1} u` along a trajectory dict.
#[pyfunction]
fn kaplan_witness(py: Python<'_>, op: &Operator, rho: f64, trajectory: &Bound<'_, PyAny>) -> PyResult<PyObject> {
    let tr: Trajectory = from_py(py, trajectory)?;
    to_py(py, &dynamics::kaplan_witness(&op.0, rho, &tr).map_err(err)?)
}

#[pyfunction]
fn lyapunov_energy(op: &Operator, f: &ReactionLaw, u: Vec<f64>) -> PyResult<f64> {
    dynamics::lyapunov_energy(&op.0, &f.0, &vector(u)).map_err(err)
}

/// Minimal and maximal equilibria between the envelope bounds.
#[pyfunction]
#[pyo3(signature = (op, f, epsilon = None, tol = 1e-10))]
fn extremal_equilibria(py: Python<'_>, op: &Operator, f: &ReactionLaw, epsilon: Option<f64>, tol: f64) -> PyResult<PyObject> {
    let set = py.allow_threads(|| equilibria::extremal_equilibria(&op.0, &f.0, epsilon, tol)).map_err(err)?;
    to_py(py, &set)
}

#[pyfunction]
fn newton_refine(py: Python<'_>, op: &Operator, f: &ReactionLaw, guess: Vec<f64>, tol: f64) -> PyResult<PyObject> {
    to_py(py, &equilibria::newton_refine(&op.0, &f.0, &vector(guess), tol).map_err(err)?)
}

/// `sup |Ku - hu + f(u)|`.
#[pyfunction]
fn stationary_residual(op: &Operator, f: &ReactionLaw, u: Vec<f64>) -> PyResult<f64> {
    if u.len() != op.0.len() {
        return Err(PyValueError::new_err(format!("expected {} values, got {}", op.0.len(), u.len())));
    }
    Ok(equilibria::stationary_residual(&op.0, &f.0, &vector(u)))
}

/// The three constant levels of a piecewise equilibrium of the bistable cubic.
#[pyfunction]
fn piecewise_roots(omega_measure: f64, lambda: f64, a_level: f64) -> PyResult<[f64; 3]> {
    equilibria::piecewise_roots(omega_measure, lambda, a_level).map_err(err)
}

/// Runs a seeded property suite: comparison, maximum_principle, supersolution or asymptotic.
#[pyfunction]
#[pyo3(signature = (suite, trials = 50, seed = 0, sizes = None))]
fn run_suite(py: Python<'_>, suite: &str, trials: usize, seed: u64, sizes: Option<Vec<usize>>) -> PyResult<PyObject> {
    let suite: Suite = parse(suite)?;
    let mut sampler = SystemSampler::default();
    if let Some(s) = sizes {
        sampler = sampler.with_sizes(s);
    }
    let report = py.allow_threads(|| verify::run_suite(suite, &sampler, trials, seed)).map_err(err)?;
    to_py(py, &report)
}

#[pymodule]
fn nonlocal_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<MeasureSpace>()?;
    m.add_class::<Kernel>()?;
    m.add_class::<Operator>()?;
    m.add_class::<ReactionLaw>()?;
    m.add_function(wrap_pyfunction!(evolve, m)?)?;
    m.add_function(wrap_pyfunction!(kaplan_witness, m)?)?;
    m.add_function(wrap_pyfunction!(lyapunov_energy, m)?)?;
    m.add_function(wrap_pyfunction!(extremal_equilibria, m)?)?;
    m.add_function(wrap_pyfunction!(newton_refine, m)?)?;
    m.add_function(wrap_pyfunction!(stationary_residual, m)?)?;
    m.add_function(wrap_pyfunction!(piecewise_roots, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    Ok(())
}
