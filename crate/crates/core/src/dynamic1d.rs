//! Idealized one-dimensional HMC with position-dependent integration time.
//!
//! For the family `U(x) = (1/beta) * (1 + x^2)^(beta/2)` every energy
//! level above `U(0)` is a closed orbit of Hamilton's equations. The
//! dynamic sampler refreshes the momentum, then moves along the exact
//! orbit for a time drawn uniformly from `[0, period]`. No accept step
//! is needed; the only approximation is numerical orbit following, whose
//! residual bias is bounded by the configured energy tolerance.
//!
//! The module provides the orbit primitives (turning points, period,
//! time-`t` flow), microcanonical orbit averages, and two probes built
//! on them: a virial identity check and a drift estimate for the
//! Lyapunov function `V(x) = U(x) + x U'(x) / 2 + 1`, whose one-step
//! expectation is exactly `U(x0) + 3/2`.

use rand::Rng;
use rand_distr::StandardNormal;
use std::sync::OnceLock;
use thiserror::Error;

/// Relative tolerance of the turning-point root find.
const ROOT_REL_TOL: f64 = 1e-12;
/// Relative tolerance between successive period quadrature refinements.
const PERIOD_REL_TOL: f64 = 1e-10;
/// Relative tolerance between successive orbit-average refinements.
const AVERAGE_REL_TOL: f64 = 1e-8;
/// Relative time tolerance of the exhaustion-time bisection.
const CROSSING_REL_TOL: f64 = 1e-11;
/// Panels of 32-node quadrature the period refinement may reach.
const MAX_PERIOD_PANELS: u32 = 4096;
/// Orbit nodes the average refinement may reach.
const MAX_AVERAGE_NODES: u32 = 1 << 14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Dynamic1dError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("energy {energy} does not exceed the potential minimum {minimum}; no orbit exists")]
    DegenerateOrbit { energy: f64, minimum: f64 },
    #[error("accuracy failure: {0}")]
    Accuracy(String),
}

/// Exponential-family potential `U(x) = (1/beta) * (1 + x^2)^(beta/2)`.
///
/// Smooth for every `beta > 0`, with `U(0) = 1/beta` and unit curvature
/// at the origin, so small orbits of every member look like the unit
/// harmonic oscillator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothExpFamily1D {
    beta: f64,
}

impl SmoothExpFamily1D {
    pub fn new(beta: f64) -> Result<Self, Dynamic1dError> {
        if !beta.is_finite() || beta <= 0.0 {
            return Err(Dynamic1dError::InvalidParameter(
                "beta must be finite and positive".into(),
            ));
        }
        Ok(Self { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `U(x)`.
    pub fn potential(&self, x: f64) -> f64 {
        (1.0 + x * x).powf(self.beta / 2.0) / self.beta
    }

    /// `U'(x) = x (1 + x^2)^(beta/2 - 1)`.
    pub fn grad(&self, x: f64) -> f64 {
        x * (1.0 + x * x).powf(self.beta / 2.0 - 1.0)
    }

    /// `U''(x)`, used to bound the local oscillation frequency.
    fn curvature(&self, x: f64) -> f64 {
        let r2 = 1.0 + x * x;
        r2.powf(self.beta / 2.0 - 2.0) * (1.0 + (self.beta - 1.0) * x * x)
    }

    /// `(U(x_b) - U(x_a)) / (x_b^2 - x_a^2)` given `d = x_b^2 - x_a^2`,
    /// computed through `ln_1p` and `exp_m1` so nearby arguments do not
    /// cancel. Continuous at `d = 0`, where it equals `U'(x_a) / (2 x_a)`.
    fn potential_slope_sq(&self, x_a: f64, d: f64) -> f64 {
        let r = 1.0 + x_a * x_a;
        let c = self.beta / 2.0;
        if d == 0.0 {
            return 0.5 * r.powf(c - 1.0);
        }
        r.powf(c) * (c * (d / r).ln_1p()).exp_m1() / d / self.beta
    }

    /// `H(x, p) = U(x) + p^2 / 2`.
    pub fn hamiltonian(&self, z: Phase1D) -> f64 {
        self.potential(z.x) + 0.5 * z.p * z.p
    }
}

/// One-dimensional phase point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase1D {
    pub x: f64,
    pub p: f64,
}

/// Closed orbit at one energy level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitSpec {
    pub energy: f64,
    pub x_minus: f64,
    pub x_plus: f64,
    pub period: f64,
}

/// Accuracy knobs for orbit following.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    /// Relative energy drift allowed along a flow leg.
    pub energy_tol: f64,
    /// Hard cap on composition substeps for a single leg.
    pub max_substeps: u32,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            energy_tol: 1e-10,
            max_substeps: 1 << 22,
        }
    }
}

impl FlowConfig {
    fn validate(&self) -> Result<(), Dynamic1dError> {
        if !self.energy_tol.is_finite() || self.energy_tol <= 0.0 {
            return Err(Dynamic1dError::InvalidParameter(
                "energy tolerance must be finite and positive".into(),
            ));
        }
        if self.max_substeps == 0 {
            return Err(Dynamic1dError::InvalidParameter(
                "substep cap must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Positive solution of `U(x) = h`, found by bracket doubling and
/// bisection to relative tolerance `1e-12`. The orbit is symmetric, so
/// the turning points are `(-x_plus, x_plus)`.
pub fn turning_points(
    target: &SmoothExpFamily1D,
    h: f64,
) -> Result<(f64, f64), Dynamic1dError> {
    let u0 = target.potential(0.0);
    if !h.is_finite() || h <= u0 {
        return Err(Dynamic1dError::DegenerateOrbit {
            energy: h,
            minimum: u0,
        });
    }
    let mut hi = 1.0f64;
    let mut guard = 0;
    while target.potential(hi) < h {
        hi *= 2.0;
        guard += 1;
        if guard > 2_000 {
            return Err(Dynamic1dError::Accuracy(
                "turning-point bracket did not close".into(),
            ));
        }
    }
    let mut lo = 0.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if target.potential(mid) < h {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= ROOT_REL_TOL * hi.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let x_plus = 0.5 * (lo + hi);
    Ok((-x_plus, x_plus))
}

fn gauss_legendre_32() -> &'static [(f64, f64)] {
    static CACHE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    CACHE.get_or_init(|| {
        let n = 32usize;
        let mut out = vec![(0.0, 0.0); n];
        for i in 1..=n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let mut p0 = 1.0f64;
                let mut p1 = x;
                for k in 1..n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let step = p1 / dp;
                x -= step;
                if step.abs() <= 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            out[i - 1] = (-x, w);
            out[n - i] = (x, w);
        }
        out
    })
}

/// Orbit period via the turning-point integral
/// `2 * integral of dx / sqrt(2 (H - U(x)))` with the substitution
/// `x = x_plus * sin(theta)`, which removes the endpoint singularity.
/// Panels are doubled until successive estimates agree to `1e-10`
/// relative.
pub fn period(target: &SmoothExpFamily1D, z0: Phase1D) -> Result<OrbitSpec, Dynamic1dError> {
    let h = target.hamiltonian(z0);
    let (x_minus, x_plus) = turning_points(target, h)?;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let rule = gauss_legendre_32();

    // With x = x_plus sin(theta) the integrand becomes 1 / sqrt(G) for
    // G = 2 (U(x_plus) - U(x)) / (x_plus^2 - x^2). The denominator is
    // x_plus^2 cos^2(theta) exactly in this parametrization, and the
    // ratio is evaluated cancellation-free, so the integrand stays
    // smooth through the turning points. The computed x_plus replaces
    // H as the energy reference; root-finding error then perturbs
    // which nearby orbit is integrated instead of corrupting the
    // integrand near its endpoints.
    let integrand = |theta: f64| -> Result<f64, Dynamic1dError> {
        let (sin_t, cos_t) = theta.sin_cos();
        let x = x_plus * sin_t;
        let d = x_plus * x_plus * cos_t * cos_t;
        let g = 2.0 * target.potential_slope_sq(x, d);
        if !(g > 0.0) || !g.is_finite() {
            return Err(Dynamic1dError::Accuracy(
                "period integrand left the classically allowed region".into(),
            ));
        }
        Ok(1.0 / g.sqrt())
    };

    let mut prev: Option<f64> = None;
    let mut panels = 2u32;
    while panels <= MAX_PERIOD_PANELS {
        let width = 2.0 * half_pi / panels as f64;
        let mut total = 0.0;
        for k in 0..panels {
            let a = -half_pi + k as f64 * width;
            let c = a + 0.5 * width;
            for (node, weight) in rule {
                total += weight * integrand(c + 0.5 * width * node)?;
            }
        }
        let zeta = 2.0 * total * 0.5 * width;
        if let Some(p) = prev {
            if (zeta - p).abs() <= PERIOD_REL_TOL * zeta.abs().max(1.0) {
                return Ok(OrbitSpec {
                    energy: h,
                    x_minus,
                    x_plus,
                    period: zeta,
                });
            }
        }
        prev = Some(zeta);
        panels *= 2;
    }
    Err(Dynamic1dError::Accuracy(
        "period quadrature did not converge".into(),
    ))
}

// Fourth-order composition coefficients: three leapfrog substeps with
// weights w1, w0, w1 where w1 = 1 / (2 - 2^(1/3)).
fn composition_weights() -> (f64, f64) {
    let c = 2f64.cbrt();
    let w1 = 1.0 / (2.0 - c);
    (w1, -c * w1)
}

struct FlowState {
    z: Phase1D,
    grad: f64,
}

impl FlowState {
    fn leapfrog(&mut self, target: &SmoothExpFamily1D, h: f64) {
        let p_half = self.z.p - 0.5 * h * self.grad;
        self.z.x += h * p_half;
        self.grad = target.grad(self.z.x);
        self.z.p = p_half - 0.5 * h * self.grad;
    }

    fn composed_step(&mut self, target: &SmoothExpFamily1D, h: f64, w: (f64, f64)) {
        self.leapfrog(target, w.0 * h);
        self.leapfrog(target, w.1 * h);
        self.leapfrog(target, w.0 * h);
    }
}

enum Attempt {
    Done(Phase1D),
    TolExceeded,
}

fn flow_attempt(
    target: &SmoothExpFamily1D,
    z0: Phase1D,
    t: f64,
    substeps: u32,
    h0: f64,
    tol_abs: f64,
) -> Attempt {
    let w = composition_weights();
    let h = t / substeps as f64;
    let mut state = FlowState {
        z: z0,
        grad: target.grad(z0.x),
    };
    for step in 1..=substeps {
        state.composed_step(target, h, w);
        if !state.z.x.is_finite() || !state.z.p.is_finite() {
            return Attempt::TolExceeded;
        }
        if step % 4 == 0 || step == substeps {
            if (target.hamiltonian(state.z) - h0).abs() > tol_abs {
                return Attempt::TolExceeded;
            }
        }
    }
    Attempt::Done(state.z)
}

/// Frequency bound used to pick the initial substep density.
fn frequency_bound(target: &SmoothExpFamily1D, x0: f64, x_plus: Option<f64>) -> f64 {
    let mut curv = target.curvature(0.0).abs().max(target.curvature(x0).abs());
    if let Some(xp) = x_plus {
        curv = curv.max(target.curvature(xp).abs());
    }
    curv.max(1e-6).sqrt()
}

fn initial_substeps(t: f64, omega: f64, energy_tol: f64, cap: u32) -> u32 {
    let h_target = (0.1 * energy_tol).powf(0.25) / omega;
    let n = (t / h_target).ceil().max(8.0);
    if n >= cap as f64 {
        cap
    } else {
        n as u32
    }
}

fn flow_inner(
    target: &SmoothExpFamily1D,
    z0: Phase1D,
    t: f64,
    cfg: &FlowConfig,
    x_plus_hint: Option<f64>,
) -> Result<Phase1D, Dynamic1dError> {
    cfg.validate()?;
    if !t.is_finite() || t < 0.0 {
        return Err(Dynamic1dError::InvalidParameter(
            "flow time must be finite and non-negative".into(),
        ));
    }
    if t == 0.0 {
        return Ok(z0);
    }
    let h0 = target.hamiltonian(z0);
    if !h0.is_finite() {
        return Err(Dynamic1dError::InvalidParameter(
            "initial energy is not finite".into(),
        ));
    }
    let tol_abs = cfg.energy_tol * h0.abs().max(1.0);
    let x_plus = match x_plus_hint {
        Some(xp) => Some(xp),
        None => turning_points(target, h0).ok().map(|(_, xp)| xp),
    };
    let omega = frequency_bound(target, z0.x, x_plus);
    let mut substeps = initial_substeps(t, omega, cfg.energy_tol, cfg.max_substeps);
    loop {
        match flow_attempt(target, z0, t, substeps, h0, tol_abs) {
            Attempt::Done(z) => return Ok(z),
            Attempt::TolExceeded => {
                if substeps >= cfg.max_substeps {
                    return Err(Dynamic1dError::Accuracy(format!(
                        "energy tolerance {} not met with {} substeps",
                        cfg.energy_tol, substeps
                    )));
                }
                substeps = substeps.saturating_mul(2).min(cfg.max_substeps);
            }
        }
    }
}

/// Advances Hamilton's equations by time `t` with a fourth-order
/// symplectic composition, doubling the substep count until the energy
/// drift stays within `cfg.energy_tol` relative to `max(1, |H(z0)|)`.
pub fn flow(
    target: &SmoothExpFamily1D,
    z0: Phase1D,
    t: f64,
    cfg: &FlowConfig,
) -> Result<Phase1D, Dynamic1dError> {
    flow_inner(target, z0, t, cfg, None)
}

struct OrbitGrid {
    h0: f64,
    tol_abs: f64,
    omega: f64,
    zeta: f64,
}

impl OrbitGrid {
    /// Mean of `f` over `nodes` equally spaced times along one period,
    /// the trapezoid rule for a periodic integrand. `None` means the
    /// requested substep density broke the energy tolerance.
    fn mean<F: Fn(Phase1D) -> f64>(
        &self,
        target: &SmoothExpFamily1D,
        z0: Phase1D,
        f: &F,
        nodes: u32,
        substeps_per_node: u32,
    ) -> Option<f64> {
        let w = composition_weights();
        let dt = self.zeta / nodes as f64;
        let h = dt / substeps_per_node as f64;
        let mut state = FlowState {
            z: z0,
            grad: target.grad(z0.x),
        };
        let mut sum = f(z0);
        for _ in 1..nodes {
            for _ in 0..substeps_per_node {
                state.composed_step(target, h, w);
            }
            if !state.z.x.is_finite()
                || !state.z.p.is_finite()
                || (target.hamiltonian(state.z) - self.h0).abs() > self.tol_abs
            {
                return None;
            }
            sum += f(state.z);
        }
        Some(sum / nodes as f64)
    }
}

/// Time average of `f` along the orbit through `z0`, one full period.
///
/// Uses the periodic trapezoid rule on equally spaced orbit nodes,
/// doubling the node count until successive estimates agree to `1e-8`
/// relative; the node positions themselves are advanced symplectically
/// under the configured energy tolerance.
pub fn microcanonical_average<F: Fn(Phase1D) -> f64>(
    target: &SmoothExpFamily1D,
    z0: Phase1D,
    f: F,
    cfg: &FlowConfig,
) -> Result<f64, Dynamic1dError> {
    cfg.validate()?;
    let orbit = period(target, z0)?;
    let grid = OrbitGrid {
        h0: orbit.energy,
        tol_abs: cfg.energy_tol * orbit.energy.abs().max(1.0),
        omega: frequency_bound(target, z0.x, Some(orbit.x_plus)),
        zeta: orbit.period,
    };

    let mut nodes = 32u32;
    let mut substeps =
        initial_substeps(grid.zeta / nodes as f64, grid.omega, cfg.energy_tol, u32::MAX)
            .max(2);
    let mut prev: Option<f64> = None;
    while nodes <= MAX_AVERAGE_NODES {
        let avg = loop {
            match grid.mean(target, z0, &f, nodes, substeps) {
                Some(v) => break v,
                None => {
                    let total = (nodes as u64) * (substeps as u64);
                    if total >= cfg.max_substeps as u64 {
                        return Err(Dynamic1dError::Accuracy(
                            "orbit grid could not hold the energy tolerance".into(),
                        ));
                    }
                    substeps = substeps.saturating_mul(2);
                }
            }
        };
        if let Some(p) = prev {
            if (avg - p).abs() <= AVERAGE_REL_TOL * avg.abs().max(1.0) {
                return Ok(avg);
            }
        }
        prev = Some(avg);
        nodes *= 2;
        // Halving the node spacing keeps the same substep width.
        substeps = substeps.div_ceil(2).max(2);
    }
    Err(Dynamic1dError::Accuracy(
        "orbit average did not converge".into(),
    ))
}

/// Absolute difference between the orbit averages of `x U'(x)` and
/// `p^2`. The two agree for any closed orbit, so the residual measures
/// pure numerical error.
pub fn virial_residual(
    target: &SmoothExpFamily1D,
    z0: Phase1D,
    cfg: &FlowConfig,
) -> Result<f64, Dynamic1dError> {
    let lhs = microcanonical_average(target, z0, |z| z.x * target.grad(z.x), cfg)?;
    let rhs = microcanonical_average(target, z0, |z| z.p * z.p, cfg)?;
    Ok((lhs - rhs).abs())
}

/// One transition of the dynamic sampler: refresh `p0` from a standard
/// normal (redrawing in the measure-zero degenerate case), then move
/// along the orbit for a time uniform on `[0, period]`. No accept step.
pub fn dynamic_hmc_step<R: Rng>(
    target: &SmoothExpFamily1D,
    x0: f64,
    rng: &mut R,
    cfg: &FlowConfig,
) -> Result<f64, Dynamic1dError> {
    assert!(x0.is_finite(), "start point must be finite");
    let p0 = loop {
        let p: f64 = rng.sample(StandardNormal);
        if !(x0 == 0.0 && p == 0.0) {
            break p;
        }
    };
    let u: f64 = rng.random();
    let z0 = Phase1D { x: x0, p: p0 };
    let orbit = period(target, z0)?;
    let tau = u * orbit.period;
    let z1 = flow_inner(target, z0, tau, cfg, Some(orbit.x_plus))?;
    Ok(z1.x)
}

/// Drift estimate of the dynamic sampler at `x0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicDriftEstimate {
    pub x0: f64,
    pub n: u64,
    /// Monte Carlo estimate of `E[ orbit average of V ]` over momentum draws.
    pub pv_estimate: f64,
    pub stderr: f64,
    /// Exact one-step expectation `U(x0) + 3/2`.
    pub predicted: f64,
}

/// Estimates the one-step expectation of `V(x) = U(x) + x U'(x)/2 + 1`
/// under the dynamic sampler by averaging the microcanonical average of
/// `V` over `n` momentum refreshes.
pub fn dynamic_drift_estimate<R: Rng>(
    target: &SmoothExpFamily1D,
    x0: f64,
    n: u64,
    rng: &mut R,
    cfg: &FlowConfig,
) -> Result<DynamicDriftEstimate, Dynamic1dError> {
    assert!(x0.is_finite(), "start point must be finite");
    assert!(n >= 100, "drift estimate needs at least 100 draws");
    let v = |z: Phase1D| target.potential(z.x) + 0.5 * z.x * target.grad(z.x) + 1.0;
    let mut count = 0u64;
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    for _ in 0..n {
        let p0 = loop {
            let p: f64 = rng.sample(StandardNormal);
            if !(x0 == 0.0 && p == 0.0) {
                break p;
            }
        };
        let avg = microcanonical_average(target, Phase1D { x: x0, p: p0 }, v, cfg)?;
        count += 1;
        let d = avg - mean;
        mean += d / count as f64;
        m2 += d * (avg - mean);
    }
    Ok(DynamicDriftEstimate {
        x0,
        n,
        pv_estimate: mean,
        stderr: (m2 / (n - 1) as f64 / n as f64).sqrt(),
        predicted: target.potential(x0) + 1.5,
    })
}

/// First time `t` in `(0, period]` at which the action-like observable
/// `x_t p_t` has moved by at least `delta` from its initial value, or
/// the full period if it never does. Found by a node scan along the
/// orbit followed by bisection inside the bracketing interval.
pub fn exhaustion_time(
    target: &SmoothExpFamily1D,
    z0: Phase1D,
    delta: f64,
    cfg: &FlowConfig,
) -> Result<f64, Dynamic1dError> {
    cfg.validate()?;
    if !delta.is_finite() || delta <= 0.0 {
        return Err(Dynamic1dError::InvalidParameter(
            "exhaustion threshold must be positive".into(),
        ));
    }
    let orbit = period(target, z0)?;
    let g0 = z0.x * z0.p;
    let crossed = |z: Phase1D| (z.x * z.p - g0).abs() >= delta;

    let nodes = 1024u32;
    let dt = orbit.period / nodes as f64;
    let mut t_lo = 0.0f64;
    let mut z_lo = z0;
    let mut bracket: Option<(f64, Phase1D, f64)> = None;
    for j in 1..=nodes {
        let t = j as f64 * dt;
        let z = flow_inner(target, z_lo, t - t_lo, cfg, Some(orbit.x_plus))?;
        if crossed(z) {
            bracket = Some((t_lo, z_lo, t));
            break;
        }
        t_lo = t;
        z_lo = z;
    }
    let Some((t_node, z_node, mut b)) = bracket else {
        return Ok(orbit.period);
    };

    // Bisect inside [t_node, b], always flowing from the cached node
    // state so evaluation times stay consistent.
    let mut a = t_node;
    while b - a > CROSSING_REL_TOL * orbit.period {
        let mid = 0.5 * (a + b);
        let z = flow_inner(target, z_node, mid - t_node, cfg, Some(orbit.x_plus))?;
        if crossed(z) {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::chain_rng;
    use std::f64::consts::PI;

    fn harmonic() -> SmoothExpFamily1D {
        SmoothExpFamily1D::new(2.0).unwrap()
    }

    /// Closed-form inverse of the potential, the oracle for the root find.
    fn turning_point_closed_form(beta: f64, h: f64) -> f64 {
        ((beta * h).powf(2.0 / beta) - 1.0).sqrt()
    }

    #[test]
    fn potential_and_gradient_match_closed_forms() {
        let t = SmoothExpFamily1D::new(0.5).unwrap();
        assert_eq!(t.potential(0.0), 2.0);
        let x = 3.0f64;
        let expected = 2.0 * (1.0 + 9.0f64).powf(0.25);
        assert!((t.potential(x) - expected).abs() <= 1e-15);
        let h = 1e-6;
        let fd = (t.potential(x + h) - t.potential(x - h)) / (2.0 * h);
        assert!((t.grad(x) - fd).abs() <= 1e-9);
    }

    #[test]
    fn turning_points_match_the_analytic_inverse() {
        for (beta, h) in [(2.0, 2.5), (0.5, 4.0), (1.0, 3.0), (4.0, 7.0)] {
            let t = SmoothExpFamily1D::new(beta).unwrap();
            let (lo, hi) = turning_points(&t, h).unwrap();
            let oracle = turning_point_closed_form(beta, h);
            assert!((hi - oracle).abs() <= 1e-10 * oracle.max(1.0), "beta {beta}");
            assert_eq!(lo, -hi);
        }
        // beta = 2, H = 2.5 gives x_plus = 2 exactly; beta = 0.5, H = 4
        // gives sqrt(15).
        let h2 = turning_points(&harmonic(), 2.5).unwrap().1;
        assert!((h2 - 2.0).abs() <= 1e-11);
        let t = SmoothExpFamily1D::new(0.5).unwrap();
        let hp = turning_points(&t, 4.0).unwrap().1;
        assert!((hp - 15f64.sqrt()).abs() <= 1e-10);
    }

    #[test]
    fn hairline_orbit_has_tiny_amplitude_and_harmonic_period() {
        let t = SmoothExpFamily1D::new(1.0).unwrap();
        let h = 1.0 + 1e-12;
        let (_, x_plus) = turning_points(&t, h).unwrap();
        assert!(x_plus < 1e-5, "x_plus = {x_plus}");
        let p0 = (2.0 * (h - 1.0)).sqrt();
        let orbit = period(&t, Phase1D { x: 0.0, p: p0 }).unwrap();
        assert!((orbit.period - 2.0 * PI).abs() <= 1e-3);
    }

    #[test]
    fn degenerate_energy_has_no_orbit() {
        let t = harmonic();
        assert!(matches!(
            period(&t, Phase1D { x: 0.0, p: 0.0 }),
            Err(Dynamic1dError::DegenerateOrbit { .. })
        ));
        assert!(turning_points(&t, 0.2).is_err());
    }

    #[test]
    fn harmonic_period_is_two_pi() {
        for z0 in [
            Phase1D { x: 2.0, p: 0.0 },
            Phase1D { x: 1.0, p: 1.0 },
            Phase1D { x: 0.0, p: 3.0 },
        ] {
            let orbit = period(&harmonic(), z0).unwrap();
            assert!(
                (orbit.period - 2.0 * PI).abs() <= 1e-9,
                "period {}",
                orbit.period
            );
        }
    }

    #[test]
    fn harmonic_flow_matches_rotation() {
        let cfg = FlowConfig::default();
        let z0 = Phase1D { x: 2.0, p: 0.0 };
        let z = flow(&harmonic(), z0, PI, &cfg).unwrap();
        assert!((z.x + 2.0).abs() <= 1e-7, "x {}", z.x);
        assert!(z.p.abs() <= 1e-7, "p {}", z.p);
        let quarter = flow(&harmonic(), z0, PI / 2.0, &cfg).unwrap();
        assert!((quarter.p + 2.0).abs() <= 1e-7);
    }

    #[test]
    fn zero_time_flow_is_identity() {
        let z0 = Phase1D { x: 1.5, p: -0.5 };
        assert_eq!(flow(&harmonic(), z0, 0.0, &FlowConfig::default()).unwrap(), z0);
    }

    #[test]
    fn flow_rejects_bad_arguments() {
        let t = harmonic();
        let z0 = Phase1D { x: 1.0, p: 0.0 };
        assert!(flow(&t, z0, -1.0, &FlowConfig::default()).is_err());
        assert!(flow(&t, z0, f64::NAN, &FlowConfig::default()).is_err());
        let bad = FlowConfig {
            energy_tol: 0.0,
            ..FlowConfig::default()
        };
        assert!(flow(&t, z0, 1.0, &bad).is_err());
    }

    #[test]
    fn unreachable_tolerance_reports_accuracy_failure() {
        let cramped = FlowConfig {
            energy_tol: 1e-15,
            max_substeps: 8,
        };
        let err = flow(&harmonic(), Phase1D { x: 5.0, p: 0.0 }, 10.0, &cramped);
        assert!(matches!(err, Err(Dynamic1dError::Accuracy(_))));
    }

    #[test]
    fn momentum_average_matches_harmonic_closed_form() {
        // For U = (1 + x^2)/2 the orbit is a circle and the time
        // average of p^2 is (x0^2 + p0^2)/2.
        let cfg = FlowConfig::default();
        let z0 = Phase1D { x: 1.0, p: 1.0 };
        let avg = microcanonical_average(&harmonic(), z0, |z| z.p * z.p, &cfg).unwrap();
        assert!((avg - 1.0).abs() <= 1e-6, "avg {avg}");
    }

    #[test]
    fn virial_residual_is_numerically_zero() {
        let cfg = FlowConfig::default();
        for beta in [0.5, 1.0, 2.0, 4.0] {
            let t = SmoothExpFamily1D::new(beta).unwrap();
            let r = virial_residual(&t, Phase1D { x: 2.0, p: 0.5 }, &cfg).unwrap();
            assert!(r <= 1e-6, "beta {beta}: residual {r}");
        }
    }

    #[test]
    fn dynamic_step_is_reproducible_and_stays_on_reachable_radii() {
        let t = SmoothExpFamily1D::new(1.0).unwrap();
        let cfg = FlowConfig::default();
        let mut r1 = chain_rng(2, 0);
        let mut r2 = chain_rng(2, 0);
        let a = dynamic_hmc_step(&t, 2.0, &mut r1, &cfg).unwrap();
        let b = dynamic_hmc_step(&t, 2.0, &mut r2, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.is_finite());
    }

    #[test]
    fn drift_estimate_matches_exact_expectation() {
        let t = harmonic();
        let cfg = FlowConfig::default();
        let mut rng = chain_rng(7, 1);
        let est = dynamic_drift_estimate(&t, 2.0, 400, &mut rng, &cfg).unwrap();
        assert_eq!(est.predicted, 4.0);
        assert!(
            (est.pv_estimate - est.predicted).abs() <= 3.0 * est.stderr,
            "estimate {} +- {}",
            est.pv_estimate,
            est.stderr
        );
    }

    #[test]
    fn exhaustion_time_matches_harmonic_closed_form() {
        // x_t p_t = -2 sin(2t) from (2, 0); |change| reaches 1 at
        // t = arcsin(1/2) / 2 = pi / 12.
        let cfg = FlowConfig::default();
        let t = exhaustion_time(&harmonic(), Phase1D { x: 2.0, p: 0.0 }, 1.0, &cfg).unwrap();
        assert!((t - PI / 12.0).abs() <= 1e-8, "t = {t}");
    }

    #[test]
    fn unreachable_threshold_returns_full_period() {
        // x p = -2 sin(2t) on this orbit, so the change never exceeds 2.
        let cfg = FlowConfig::default();
        let t = exhaustion_time(&harmonic(), Phase1D { x: 2.0, p: 0.0 }, 100.0, &cfg).unwrap();
        let orbit = period(&harmonic(), Phase1D { x: 2.0, p: 0.0 }).unwrap();
        assert_eq!(t, orbit.period);
    }

    #[test]
    fn bad_parameters_are_rejected() {
        assert!(SmoothExpFamily1D::new(0.0).is_err());
        assert!(SmoothExpFamily1D::new(f64::NAN).is_err());
        let t = harmonic();
        let z0 = Phase1D { x: 2.0, p: 0.0 };
        assert!(exhaustion_time(&t, z0, 0.0, &FlowConfig::default()).is_err());
        assert!(exhaustion_time(&t, z0, -1.0, &FlowConfig::default()).is_err());
    }
}
