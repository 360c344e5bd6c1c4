use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use polaron_core::ansatz::{self, ModelParams, VariationalState};
use polaron_core::bath::{self, DiscretizedBath, Mode, SpectralDensity};
use polaron_core::observables::{self, MomentChannel, WignerCurve};
use polaron_core::optimizer::{self, OptimizerConfig, SolveReport};
use polaron_core::oracles::{ed, thermal};
use polaron_core::Error;

create_exception!(polaron, PolaronError, PyException);
create_exception!(polaron, DomainError, PolaronError);
create_exception!(polaron, ConvergenceError, PolaronError);

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Domain(_) | Error::DegenerateState(_) => DomainError::new_err(err.to_string()),
        Error::Convergence { .. } => ConvergenceError::new_err(err.to_string()),
        Error::Io(_) => PolaronError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for polaron_core::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn params(delta: f64) -> PyResult<ModelParams> {
    ModelParams::new(delta).py_err()
}

/// Discretized Ohmic bath `J(ω) = 2αω θ(ω_c − ω)` on logarithmic shells.
#[pyclass(name = "Bath", module = "polaron", frozen)]
#[derive(Clone)]
struct PyBath {
    inner: DiscretizedBath,
}

#[pymethods]
impl PyBath {
    /// Logarithmic discretization with ratio `lam`. Without `num_modes`, the
    /// mode count is chosen so the infrared edge sits well below `Δ_R(delta)`.
    #[staticmethod]
    #[pyo3(signature = (alpha, lam, num_modes=None, delta=None, omega_c=1.0))]
    fn discretize(
        alpha: f64,
        lam: f64,
        num_modes: Option<usize>,
        delta: Option<f64>,
        omega_c: f64,
    ) -> PyResult<Self> {
        let sd = SpectralDensity::new(alpha, omega_c).py_err()?;
        let m = match (num_modes, delta) {
            (Some(m), _) => m,
            (None, Some(d)) => bath::auto_num_modes(&sd, lam, d, bath::DEFAULT_IR_FRACTION).py_err()?,
            (None, None) => {
                return Err(PyValueError::new_err("give num_modes or delta"));
            }
        };
        Ok(Self {
            inner: bath::discretize(&sd, lam, m).py_err()?,
        })
    }

    /// Explicit modes; frequencies strictly decreasing.
    #[staticmethod]
    #[pyo3(signature = (omegas, couplings, alpha=f64::NAN, lam=f64::NAN, omega_c=1.0))]
    fn from_modes(omegas: Vec<f64>, couplings: Vec<f64>, alpha: f64, lam: f64, omega_c: f64) -> PyResult<Self> {
        if omegas.len() != couplings.len() {
            return Err(PyValueError::new_err("omegas and couplings differ in length"));
        }
        let modes = omegas
            .into_iter()
            .zip(couplings)
            .map(|(omega, g)| Mode { omega, g })
            .collect();
        Ok(Self {
            inner: DiscretizedBath::from_modes(alpha, omega_c, lam, modes).py_err()?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: DiscretizedBath::from_json(text).py_err()?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py_err()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn num_modes(&self) -> usize {
        self.inner.num_modes()
    }

    #[getter]
    fn omegas(&self) -> Vec<f64> {
        self.inner.omegas().collect()
    }

    #[getter]
    fn couplings(&self) -> Vec<f64> {
        self.inner.couplings().collect()
    }

    /// `g_k / (2ω_k)`.
    fn classical_displacements(&self) -> Vec<f64> {
        self.inner.classical_displacements()
    }

    fn __len__(&self) -> usize {
        self.inner.num_modes()
    }

    fn __repr__(&self) -> String {
        format!(
            "Bath(alpha={}, lambda={}, num_modes={})",
            self.inner.alpha,
            self.inner.lambda,
            self.inner.num_modes()
        )
    }
}

/// Weights `C_n` and displacement rows `f⁽ⁿ⁾`.
#[pyclass(name = "State", module = "polaron", frozen)]
#[derive(Clone)]
struct PyState {
    inner: VariationalState,
}

#[pymethods]
impl PyState {
    #[new]
    fn new(weights: Vec<f64>, rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            inner: VariationalState::from_rows(weights, rows).py_err()?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: VariationalState =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("state serializes")
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    #[getter]
    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.rows().map(<[f64]>::to_vec).collect()
    }

    #[getter]
    fn num_polarons(&self) -> usize {
        self.inner.num_polarons()
    }

    #[getter]
    fn num_modes(&self) -> usize {
        self.inner.num_modes()
    }

    fn norm(&self) -> f64 {
        self.inner.norm()
    }

    fn __repr__(&self) -> String {
        format!(
            "State(num_polarons={}, num_modes={})",
            self.inner.num_polarons(),
            self.inner.num_modes()
        )
    }
}

#[pyclass(name = "SolveReport", module = "polaron", frozen)]
struct PySolveReport {
    inner: SolveReport,
}

#[pymethods]
impl PySolveReport {
    #[getter]
    fn state(&self) -> PyState {
        PyState {
            inner: self.inner.state.clone(),
        }
    }

    #[getter]
    fn energy(&self) -> f64 {
        self.inner.energy
    }

    #[getter]
    fn grad_norm(&self) -> f64 {
        self.inner.grad_norm
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
    fn energy_history(&self) -> Vec<f64> {
        self.inner.energy_history_per_n.clone()
    }

    #[getter]
    fn diagnostics(&self) -> Option<String> {
        self.inner.diagnostics.clone()
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("report serializes")
    }

    fn __repr__(&self) -> String {
        format!(
            "SolveReport(N={}, energy={:e}, converged={})",
            self.inner.num_polarons(),
            self.inner.energy,
            self.inner.converged
        )
    }
}

fn optimizer_config(grad_tol: f64, max_iters: usize, restarts: usize, seed: u64) -> OptimizerConfig {
    OptimizerConfig {
        grad_tol,
        max_iters,
        num_restarts: restarts,
        seed,
        ..OptimizerConfig::default()
    }
}

#[pyfunction]
fn spectral_density(alpha: f64, omega: f64, omega_c: f64) -> PyResult<f64> {
    SpectralDensity::new(alpha, omega_c).and_then(|sd| sd.evaluate(omega)).py_err()
}

#[pyfunction]
fn energy(state: &PyState, bath: &PyBath, delta: f64) -> PyResult<f64> {
    ansatz::energy(&state.inner, &bath.inner, &params(delta)?).py_err()
}

/// Returns `(dE/dC, dE/df)` with `dE/df` shaped like the rows.
#[pyfunction]
fn gradient(state: &PyState, bath: &PyBath, delta: f64) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let g = ansatz::gradient(&state.inner, &bath.inner, &params(delta)?).py_err()?;
    let rows = (0..g.weights.len()).map(|n| g.row(n).to_vec()).collect();
    Ok((g.weights, rows))
}

/// Silbey-Harris fixed point; returns `(delta_r, displacements)`.
#[pyfunction]
fn sh_solve(bath: &PyBath, delta: f64) -> PyResult<(f64, Vec<f64>)> {
    let sh = ansatz::sh_solve(&bath.inner, &params(delta)?).py_err()?;
    Ok((sh.delta_r, sh.displacements))
}

#[pyfunction]
#[pyo3(signature = (state, bath, delta, grad_tol=1e-9, max_iters=50_000))]
fn optimize(
    py: Python<'_>,
    state: &PyState,
    bath: &PyBath,
    delta: f64,
    grad_tol: f64,
    max_iters: usize,
) -> PyResult<PySolveReport> {
    let p = params(delta)?;
    let config = optimizer_config(grad_tol, max_iters, OptimizerConfig::default().num_restarts, 0);
    let inner = py
        .allow_threads(|| optimizer::optimize(&state.inner, &bath.inner, &p, &config))
        .py_err()?;
    Ok(PySolveReport { inner })
}

/// Optimized states for `N = 1 ..= n_max`, grown from the Silbey-Harris state.
#[pyfunction]
#[pyo3(signature = (bath, delta, n_max, grad_tol=1e-9, max_iters=50_000, restarts=4, seed=0))]
fn solve_ladder(
    py: Python<'_>,
    bath: &PyBath,
    delta: f64,
    n_max: usize,
    grad_tol: f64,
    max_iters: usize,
    restarts: usize,
    seed: u64,
) -> PyResult<Vec<PySolveReport>> {
    let p = params(delta)?;
    let config = optimizer_config(grad_tol, max_iters, restarts, seed);
    let reports = py
        .allow_threads(|| optimizer::solve_ladder(&bath.inner, &p, &config, n_max))
        .py_err()?;
    Ok(reports.into_iter().map(|inner| PySolveReport { inner }).collect())
}

/// `⟨σx⟩`, negative for a coherent spin.
#[pyfunction]
fn coherence(state: &PyState) -> PyResult<f64> {
    observables::coherence(&state.inner).py_err()
}

fn curve_values(curve: PyResult<WignerCurve>) -> PyResult<Vec<f64>> {
    curve.map(|c| c.values)
}

#[pyfunction]
fn wigner_diag(state: &PyState, bath: &PyBath, k: usize, x: Vec<f64>) -> PyResult<Vec<f64>> {
    curve_values(observables::wigner_diag(&state.inner, &bath.inner, k, &x).py_err())
}

#[pyfunction]
fn wigner_offdiag(state: &PyState, bath: &PyBath, k: usize, x: Vec<f64>) -> PyResult<Vec<f64>> {
    curve_values(observables::wigner_offdiag(&state.inner, &bath.inner, k, &x).py_err())
}

#[pyfunction]
fn symmetric_grid(half_width: f64, count: usize) -> PyResult<Vec<f64>> {
    if count < 2 {
        return Err(PyValueError::new_err("count must be >= 2"));
    }
    Ok(observables::symmetric_grid(half_width, count))
}

/// Moment table `A[m][m']` of mode `k`; channel is one of `identity`,
/// `sigma_x`, `sigma_y`, `sigma_z`, `spin_up`.
#[pyfunction]
#[pyo3(signature = (state, bath, k, m_max=10, channel="identity"))]
fn mode_moments(state: &PyState, bath: &PyBath, k: usize, m_max: usize, channel: &str) -> PyResult<Vec<Vec<f64>>> {
    let channel: MomentChannel = channel.parse().py_err()?;
    let table = observables::mode_moments(&state.inner, &bath.inner, k, m_max, channel).py_err()?;
    Ok(table.entries.chunks(m_max).map(<[f64]>::to_vec).collect())
}

/// Moment-series Wigner slice (prefactor `2/π`) of mode `k`.
#[pyfunction]
#[pyo3(signature = (state, bath, k, x, m_max=10, channel="spin_up"))]
fn wigner_from_moments(
    state: &PyState,
    bath: &PyBath,
    k: usize,
    x: Vec<f64>,
    m_max: usize,
    channel: &str,
) -> PyResult<Vec<f64>> {
    let channel: MomentChannel = channel.parse().py_err()?;
    let table = observables::mode_moments(&state.inner, &bath.inner, k, m_max, channel).py_err()?;
    curve_values(observables::wigner_from_moments(&table, &x).py_err())
}

/// Exact ground state of a few-mode problem; returns `(energy, coherence)`.
#[pyfunction]
#[pyo3(signature = (omegas, couplings, delta, fock_cutoff=30))]
fn ed_ground(
    py: Python<'_>,
    omegas: Vec<f64>,
    couplings: Vec<f64>,
    delta: f64,
    fock_cutoff: usize,
) -> PyResult<(f64, f64)> {
    if omegas.len() != couplings.len() {
        return Err(PyValueError::new_err("omegas and couplings differ in length"));
    }
    let problem = ed::EdProblem {
        modes: omegas
            .into_iter()
            .zip(couplings)
            .map(|(omega, g)| Mode { omega, g })
            .collect(),
        fock_cutoff,
        delta,
    };
    let res = py.allow_threads(|| ed::ed_ground(&problem)).py_err()?;
    Ok((res.energy, res.coherence))
}

/// Exact Toulouse-line `−⟨σx⟩` at temperature `t`.
#[pyfunction]
#[pyo3(signature = (delta, t, omega_c=1.0))]
fn toulouse_coherence(delta: f64, t: f64, omega_c: f64) -> PyResult<f64> {
    thermal::ToulouseParams::new(delta, omega_c, t)
        .and_then(|p| thermal::toulouse_coherence(&p))
        .py_err()
}

#[pyfunction]
fn onepolaron_thermal(delta_r: f64, delta: f64, t: f64) -> PyResult<f64> {
    thermal::onepolaron_thermal(delta_r, delta, t).py_err()
}

#[pymodule]
fn polaron(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("PolaronError", py.get_type_bound::<PolaronError>())?;
    m.add("DomainError", py.get_type_bound::<DomainError>())?;
    m.add("ConvergenceError", py.get_type_bound::<ConvergenceError>())?;
    m.add_class::<PyBath>()?;
    m.add_class::<PyState>()?;
    m.add_class::<PySolveReport>()?;
    m.add_function(wrap_pyfunction!(spectral_density, m)?)?;
    m.add_function(wrap_pyfunction!(energy, m)?)?;
    m.add_function(wrap_pyfunction!(gradient, m)?)?;
    m.add_function(wrap_pyfunction!(sh_solve, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(solve_ladder, m)?)?;
    m.add_function(wrap_pyfunction!(coherence, m)?)?;
    m.add_function(wrap_pyfunction!(wigner_diag, m)?)?;
    m.add_function(wrap_pyfunction!(wigner_offdiag, m)?)?;
    m.add_function(wrap_pyfunction!(symmetric_grid, m)?)?;
    m.add_function(wrap_pyfunction!(mode_moments, m)?)?;
    m.add_function(wrap_pyfunction!(wigner_from_moments, m)?)?;
    m.add_function(wrap_pyfunction!(ed_ground, m)?)?;
    m.add_function(wrap_pyfunction!(toulouse_coherence, m)?)?;
    m.add_function(wrap_pyfunction!(onepolaron_thermal, m)?)?;
    Ok(())
}
