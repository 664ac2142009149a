//! Python bindings for the sampler, the Monte Carlo probes, and the
//! one-dimensional dynamic-time sampler.
//!
//! The module mirrors the Rust API with plain functions plus a few
//! small result classes. Randomness is always derived from an explicit
//! `(seed, stream)` pair, so every call is reproducible from Python.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use hmc_ergo::diagnostics;
use hmc_ergo::dynamic1d::{
    self, FlowConfig, Phase1D, SmoothExpFamily1D,
};
use hmc_ergo::kernels::{
    chain_rng, probe_rng, HmcKernelConfig, StepCountDistribution,
};
use hmc_ergo::targets::{ExpFamilyTarget, GaussianTarget, Target as TargetOps};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn check_state(target: &dyn TargetOps, x0: &[f64]) -> PyResult<()> {
    if x0.len() != target.dim() {
        return Err(PyValueError::new_err(format!(
            "start point has dimension {}, target expects {}",
            x0.len(),
            target.dim()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(PyValueError::new_err("start point must be finite"));
    }
    Ok(())
}

/// A potential with its gradient.
#[pyclass(name = "Target", frozen)]
struct PyTarget {
    inner: Box<dyn TargetOps>,
    repr: String,
}

#[pymethods]
impl PyTarget {
    /// Gaussian with the given diagonal precision.
    #[staticmethod]
    fn gaussian(precision: Vec<f64>) -> PyResult<Self> {
        let repr = format!("Target.gaussian({precision:?})");
        let inner = GaussianTarget::new(precision).map_err(value_err)?;
        Ok(Self {
            inner: Box::new(inner),
            repr,
        })
    }

    /// Standard Gaussian in `dim` dimensions.
    #[staticmethod]
    fn standard_gaussian(dim: usize) -> PyResult<Self> {
        if dim == 0 {
            return Err(PyValueError::new_err("dimension must be at least 1"));
        }
        Ok(Self {
            inner: Box::new(GaussianTarget::standard(dim)),
            repr: format!("Target.standard_gaussian({dim})"),
        })
    }

    /// Rotationally symmetric exponential-family potential
    /// `alpha * (kappa^2 + |x|^2)^(beta / 2)`.
    #[staticmethod]
    fn exp_family(alpha: f64, beta: f64, kappa: f64, dim: usize) -> PyResult<Self> {
        let inner = ExpFamilyTarget::new(alpha, beta, kappa, dim).map_err(value_err)?;
        Ok(Self {
            inner: Box::new(inner),
            repr: format!("Target.exp_family({alpha}, {beta}, {kappa}, {dim})"),
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn potential(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.potential(&x).map_err(value_err)
    }

    fn gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.gradient(&x).map_err(value_err)
    }

    fn __repr__(&self) -> &str {
        &self.repr
    }
}

/// Step size plus step-count law of the leapfrog proposal.
#[pyclass(name = "KernelConfig", frozen)]
struct PyKernelConfig {
    inner: HmcKernelConfig,
}

#[pymethods]
impl PyKernelConfig {
    /// Kernel that always integrates `steps` leapfrog steps.
    #[staticmethod]
    fn fixed(epsilon: f64, steps: u32) -> PyResult<Self> {
        HmcKernelConfig::new(epsilon, StepCountDistribution::Fixed(steps))
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    /// Kernel that draws the step count uniformly from `{1, ..., max_steps}`.
    #[staticmethod]
    fn uniform(epsilon: f64, max_steps: u32) -> PyResult<Self> {
        HmcKernelConfig::new(epsilon, StepCountDistribution::Uniform { max: max_steps })
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    /// Copy of this kernel with a diagonal mass matrix.
    fn with_mass_diag(&self, mass: Vec<f64>) -> PyResult<Self> {
        self.inner
            .clone()
            .with_mass_diag(mass)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon()
    }

    #[getter]
    fn max_steps(&self) -> u32 {
        self.inner.steps().max_steps()
    }

    fn __repr__(&self) -> String {
        match self.inner.steps() {
            StepCountDistribution::Fixed(l) => {
                format!("KernelConfig.fixed({}, {l})", self.inner.epsilon())
            }
            StepCountDistribution::Uniform { max } => {
                format!("KernelConfig.uniform({}, {max})", self.inner.epsilon())
            }
        }
    }
}

/// Counts accumulated over one chain run.
#[pyclass(name = "ChainSummary", frozen)]
struct PyChainSummary {
    #[pyo3(get)]
    transitions: u64,
    #[pyo3(get)]
    accepted: u64,
    #[pyo3(get)]
    divergences: u64,
    #[pyo3(get)]
    mean_steps: f64,
}

#[pymethods]
impl PyChainSummary {
    fn acceptance_rate(&self) -> f64 {
        if self.transitions == 0 {
            0.0
        } else {
            self.accepted as f64 / self.transitions as f64
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "ChainSummary(transitions={}, accepted={}, divergences={}, mean_steps={})",
            self.transitions, self.accepted, self.divergences, self.mean_steps
        )
    }
}

/// A Monte Carlo mean with its standard error.
#[pyclass(name = "Estimate", frozen)]
struct PyEstimate {
    #[pyo3(get)]
    estimate: f64,
    #[pyo3(get)]
    stderr: f64,
    #[pyo3(get)]
    n: u64,
}

#[pymethods]
impl PyEstimate {
    fn __repr__(&self) -> String {
        format!(
            "Estimate(estimate={}, stderr={}, n={})",
            self.estimate, self.stderr, self.n
        )
    }
}

impl From<diagnostics::MonteCarloEstimate> for PyEstimate {
    fn from(e: diagnostics::MonteCarloEstimate) -> Self {
        Self {
            estimate: e.estimate,
            stderr: e.stderr,
            n: e.n,
        }
    }
}

/// Estimated radial contraction factor of one transition.
#[pyclass(name = "DriftEstimate", frozen)]
struct PyDriftEstimate {
    #[pyo3(get)]
    x0: Vec<f64>,
    #[pyo3(get)]
    s: f64,
    #[pyo3(get)]
    n: u64,
    #[pyo3(get)]
    ratio_mean: f64,
    #[pyo3(get)]
    ratio_stderr: f64,
}

#[pymethods]
impl PyDriftEstimate {
    fn __repr__(&self) -> String {
        format!(
            "DriftEstimate(x0={:?}, s={}, n={}, ratio_mean={}, ratio_stderr={})",
            self.x0, self.s, self.n, self.ratio_mean, self.ratio_stderr
        )
    }
}

/// Closed Hamiltonian orbit of the one-dimensional smooth family.
#[pyclass(name = "Orbit", frozen)]
struct PyOrbit {
    #[pyo3(get)]
    energy: f64,
    #[pyo3(get)]
    x_minus: f64,
    #[pyo3(get)]
    x_plus: f64,
    #[pyo3(get)]
    period: f64,
}

#[pymethods]
impl PyOrbit {
    fn __repr__(&self) -> String {
        format!(
            "Orbit(energy={}, x_minus={}, x_plus={}, period={})",
            self.energy, self.x_minus, self.x_plus, self.period
        )
    }
}

/// One-step drift of the dynamic sampler against its closed form.
#[pyclass(name = "DynamicDrift", frozen)]
struct PyDynamicDrift {
    #[pyo3(get)]
    x0: f64,
    #[pyo3(get)]
    n: u64,
    #[pyo3(get)]
    pv_estimate: f64,
    #[pyo3(get)]
    stderr: f64,
    #[pyo3(get)]
    predicted: f64,
}

#[pymethods]
impl PyDynamicDrift {
    fn __repr__(&self) -> String {
        format!(
            "DynamicDrift(x0={}, n={}, pv_estimate={}, stderr={}, predicted={})",
            self.x0, self.n, self.pv_estimate, self.stderr, self.predicted
        )
    }
}

/// Runs `n` Metropolis-adjusted transitions from `x0` on the stream
/// `(seed, chain)` and returns the visited states plus a summary.
#[pyfunction]
#[pyo3(signature = (config, target, x0, n, seed, chain = 0))]
fn run_chain(
    config: &PyKernelConfig,
    target: &PyTarget,
    x0: Vec<f64>,
    n: u64,
    seed: u64,
    chain: u64,
) -> PyResult<(Vec<Vec<f64>>, PyChainSummary)> {
    check_state(target.inner.as_ref(), &x0)?;
    let mut rng = chain_rng(seed, chain);
    let (samples, summary) =
        hmc_ergo::kernels::run_chain(&config.inner, target.inner.as_ref(), &x0, n, &mut rng);
    Ok((
        samples,
        PyChainSummary {
            transitions: summary.transitions,
            accepted: summary.accepted,
            divergences: summary.divergences,
            mean_steps: summary.mean_steps,
        },
    ))
}

fn check_draws(n: u64) -> PyResult<()> {
    if n < diagnostics::MIN_PROBE_DRAWS {
        return Err(PyValueError::new_err(format!(
            "probe needs at least {} draws",
            diagnostics::MIN_PROBE_DRAWS
        )));
    }
    Ok(())
}

/// Estimates `E[exp(s * (|x1| - |x0|))]` over `n` independent
/// transitions from `x0`. Values below 1 mean the transition pulls the
/// radius inward at exponential rate `s`.
#[pyfunction]
#[pyo3(signature = (config, target, x0, s, n, seed, probe = 0))]
fn drift_ratio(
    config: &PyKernelConfig,
    target: &PyTarget,
    x0: Vec<f64>,
    s: f64,
    n: u64,
    seed: u64,
    probe: u64,
) -> PyResult<PyDriftEstimate> {
    check_state(target.inner.as_ref(), &x0)?;
    check_draws(n)?;
    if !(s.is_finite() && s > 0.0) {
        return Err(PyValueError::new_err("drift rate must be positive"));
    }
    let mut rng = probe_rng(seed, probe);
    let est = diagnostics::drift_ratio(&config.inner, target.inner.as_ref(), &x0, s, n, &mut rng);
    Ok(PyDriftEstimate {
        x0: est.x0,
        s: est.s,
        n: est.n,
        ratio_mean: est.ratio_mean,
        ratio_stderr: est.ratio_stderr,
    })
}

/// Estimates the expected rejection probability of one transition from `x0`.
#[pyfunction]
#[pyo3(signature = (config, target, x0, n, seed, probe = 0))]
fn rejection_prob(
    config: &PyKernelConfig,
    target: &PyTarget,
    x0: Vec<f64>,
    n: u64,
    seed: u64,
    probe: u64,
) -> PyResult<PyEstimate> {
    check_state(target.inner.as_ref(), &x0)?;
    check_draws(n)?;
    let mut rng = probe_rng(seed, probe);
    Ok(diagnostics::rejection_prob(&config.inner, target.inner.as_ref(), &x0, n, &mut rng).into())
}

/// Estimates the fraction of proposals landing within distance `delta` of `x0`.
#[pyfunction]
#[pyo3(signature = (config, target, x0, delta, n, seed, probe = 0))]
fn ball_mass(
    config: &PyKernelConfig,
    target: &PyTarget,
    x0: Vec<f64>,
    delta: f64,
    n: u64,
    seed: u64,
    probe: u64,
) -> PyResult<PyEstimate> {
    check_state(target.inner.as_ref(), &x0)?;
    check_draws(n)?;
    if !(delta.is_finite() && delta > 0.0) {
        return Err(PyValueError::new_err("ball radius must be positive"));
    }
    let mut rng = probe_rng(seed, probe);
    Ok(
        diagnostics::ball_mass(&config.inner, target.inner.as_ref(), &x0, delta, n, &mut rng)
            .into(),
    )
}

/// Estimates the fraction of inward proposals that are rejectable.
#[pyfunction]
#[pyo3(signature = (config, target, x0, n, seed, probe = 0))]
fn inward_rejection_mass(
    config: &PyKernelConfig,
    target: &PyTarget,
    x0: Vec<f64>,
    n: u64,
    seed: u64,
    probe: u64,
) -> PyResult<PyEstimate> {
    check_state(target.inner.as_ref(), &x0)?;
    check_draws(n)?;
    let mut rng = probe_rng(seed, probe);
    Ok(
        diagnostics::inward_rejection_mass(&config.inner, target.inner.as_ref(), &x0, n, &mut rng)
            .into(),
    )
}

/// Names the sampler behaviour implied by the tail exponent `beta`:
/// one of `heavy_nongeometric`, `geometric`, `boundary_gaussian`,
/// `light_nongeometric`.
#[pyfunction]
fn tail_classify(beta: f64) -> PyResult<&'static str> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(PyValueError::new_err("tail exponent must be positive"));
    }
    Ok(diagnostics::tail_classify(beta).label())
}

fn smooth_target(beta: f64) -> PyResult<SmoothExpFamily1D> {
    SmoothExpFamily1D::new(beta).map_err(value_err)
}

fn flow_config(energy_tol: f64, max_substeps: u32) -> PyResult<FlowConfig> {
    let cfg = FlowConfig {
        energy_tol,
        max_substeps,
    };
    if !(energy_tol.is_finite() && energy_tol > 0.0) {
        return Err(PyValueError::new_err(
            "energy tolerance must be finite and positive",
        ));
    }
    if max_substeps == 0 {
        return Err(PyValueError::new_err("substep cap must be at least 1"));
    }
    Ok(cfg)
}

/// Closed orbit of the smooth one-dimensional family with tail
/// exponent `beta` through the phase point `(x, p)`.
#[pyfunction]
fn orbit(beta: f64, x: f64, p: f64) -> PyResult<PyOrbit> {
    let target = smooth_target(beta)?;
    let spec = dynamic1d::period(&target, Phase1D { x, p }).map_err(value_err)?;
    Ok(PyOrbit {
        energy: spec.energy,
        x_minus: spec.x_minus,
        x_plus: spec.x_plus,
        period: spec.period,
    })
}

/// Runs `n` steps of the dynamic-time sampler from `x0` and returns the
/// visited positions. Each step refreshes the momentum and flows for a
/// uniform fraction of the orbit period.
#[pyfunction]
#[pyo3(signature = (beta, x0, n, seed, chain = 0, energy_tol = 1e-10, max_substeps = 1 << 22))]
fn dynamic_chain(
    beta: f64,
    x0: f64,
    n: u64,
    seed: u64,
    chain: u64,
    energy_tol: f64,
    max_substeps: u32,
) -> PyResult<Vec<f64>> {
    if !x0.is_finite() {
        return Err(PyValueError::new_err("start point must be finite"));
    }
    let target = smooth_target(beta)?;
    let cfg = flow_config(energy_tol, max_substeps)?;
    let mut rng = chain_rng(seed, chain);
    let mut samples = Vec::with_capacity(n as usize);
    let mut x = x0;
    for _ in 0..n {
        x = dynamic1d::dynamic_hmc_step(&target, x, &mut rng, &cfg).map_err(value_err)?;
        samples.push(x);
    }
    Ok(samples)
}

/// Estimates the one-step drift expectation of the dynamic sampler at
/// `x0` and pairs it with the closed-form prediction `U(x0) + 3/2`.
#[pyfunction]
#[pyo3(signature = (beta, x0, n, seed, probe = 0, energy_tol = 1e-10, max_substeps = 1 << 22))]
fn dynamic_drift(
    beta: f64,
    x0: f64,
    n: u64,
    seed: u64,
    probe: u64,
    energy_tol: f64,
    max_substeps: u32,
) -> PyResult<PyDynamicDrift> {
    if !x0.is_finite() {
        return Err(PyValueError::new_err("start point must be finite"));
    }
    if n < 100 {
        return Err(PyValueError::new_err(
            "drift estimate needs at least 100 draws",
        ));
    }
    let target = smooth_target(beta)?;
    let cfg = flow_config(energy_tol, max_substeps)?;
    let mut rng = probe_rng(seed, probe);
    let est = dynamic1d::dynamic_drift_estimate(&target, x0, n, &mut rng, &cfg)
        .map_err(value_err)?;
    Ok(PyDynamicDrift {
        x0: est.x0,
        n: est.n,
        pv_estimate: est.pv_estimate,
        stderr: est.stderr,
        predicted: est.predicted,
    })
}

/// First time along the orbit through `(x, p)` at which `x_t p_t` moves
/// by at least `delta` from its initial value, or the full period.
#[pyfunction]
#[pyo3(signature = (beta, x, p, delta, energy_tol = 1e-10, max_substeps = 1 << 22))]
fn exhaustion_time(
    beta: f64,
    x: f64,
    p: f64,
    delta: f64,
    energy_tol: f64,
    max_substeps: u32,
) -> PyResult<f64> {
    let target = smooth_target(beta)?;
    let cfg = flow_config(energy_tol, max_substeps)?;
    dynamic1d::exhaustion_time(&target, Phase1D { x, p }, delta, &cfg).map_err(value_err)
}

#[pymodule]
fn hmc_ergo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyTarget>()?;
    m.add_class::<PyKernelConfig>()?;
    m.add_class::<PyChainSummary>()?;
    m.add_class::<PyEstimate>()?;
    m.add_class::<PyDriftEstimate>()?;
    m.add_class::<PyOrbit>()?;
    m.add_class::<PyDynamicDrift>()?;
    m.add_function(wrap_pyfunction!(run_chain, m)?)?;
    m.add_function(wrap_pyfunction!(drift_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(rejection_prob, m)?)?;
    m.add_function(wrap_pyfunction!(ball_mass, m)?)?;
    m.add_function(wrap_pyfunction!(inward_rejection_mass, m)?)?;
    m.add_function(wrap_pyfunction!(tail_classify, m)?)?;
    m.add_function(wrap_pyfunction!(orbit, m)?)?;
    m.add_function(wrap_pyfunction!(dynamic_chain, m)?)?;
    m.add_function(wrap_pyfunction!(dynamic_drift, m)?)?;
    m.add_function(wrap_pyfunction!(exhaustion_time, m)?)?;
    Ok(())
}
