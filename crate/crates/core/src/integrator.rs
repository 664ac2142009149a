//! Leapfrog integration of Hamiltonian flow with unit mass.
//!
//! One leapfrog step of size `eps` maps `(x, p)` to `(x', p')` via
//!
//! ```text
//! p_half = p - (eps/2) * grad U(x)
//! x'     = x + eps * p_half
//! p'     = p_half - (eps/2) * grad U(x')
//! ```
//!
//! Besides running the recursion, this module evaluates two closed-form
//! decompositions of an `L`-step trajectory: [`marginal_proposal`] writes
//! the endpoint position as the start position plus a gradient-weighted
//! drift plus `L * eps * p0`, and [`final_momentum`] writes the endpoint
//! momentum as `p0` minus a trapezoidal gradient sum. Both must agree
//! with the recursion itself, which gives tests an independent route to
//! the same numbers.

use crate::targets::{Target, TargetError};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrateError {
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error("position has dimension {x_len} but momentum has {p_len}")]
    MismatchedPhase { x_len: usize, p_len: usize },
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("trajectory diverged; last finite step index {last_finite_step}")]
    Diverged { last_finite_step: usize },
}

/// Position and momentum at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    /// Builds a phase point, requiring matching dimensions and finite entries.
    pub fn new(x: Vec<f64>, p: Vec<f64>) -> Result<Self, IntegrateError> {
        if x.len() != p.len() {
            return Err(IntegrateError::MismatchedPhase {
                x_len: x.len(),
                p_len: p.len(),
            });
        }
        if x.iter().chain(p.iter()).any(|v| !v.is_finite()) {
            return Err(TargetError::NonFiniteInput.into());
        }
        Ok(Self { x, p })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    fn is_finite(&self) -> bool {
        self.x.iter().chain(self.p.iter()).all(|v| v.is_finite())
    }
}

/// Step size and step count for one integration leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeapfrogConfig {
    epsilon: f64,
    steps: u32,
}

impl LeapfrogConfig {
    pub fn new(epsilon: f64, steps: u32) -> Result<Self, IntegrateError> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(IntegrateError::InvalidConfig(
                "step size must be finite and positive".into(),
            ));
        }
        if steps == 0 {
            return Err(IntegrateError::InvalidConfig(
                "step count must be at least 1".into(),
            ));
        }
        Ok(Self { epsilon, steps })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }
}

/// A realized leapfrog trajectory: every visited phase point plus the
/// Hamiltonian at each of them.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<PhasePoint>,
    pub epsilon: f64,
    pub energies: Vec<f64>,
}

impl Trajectory {
    /// Number of leapfrog steps taken.
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn initial(&self) -> &PhasePoint {
        &self.points[0]
    }

    pub fn final_point(&self) -> &PhasePoint {
        &self.points[self.points.len() - 1]
    }
}

/// Total energy `H(x, p) = U(x) + |p|^2 / 2`.
pub fn hamiltonian<T: Target + ?Sized>(target: &T, z: &PhasePoint) -> Result<f64, IntegrateError> {
    let u = target.potential(&z.x)?;
    Ok(u + 0.5 * z.p.iter().map(|v| v * v).sum::<f64>())
}

/// One leapfrog step of size `epsilon`.
///
/// A non-finite intermediate (from gradient overflow on steep tails)
/// yields [`IntegrateError::Diverged`] with `last_finite_step = 0`,
/// meaning the input point was the last usable one.
pub fn leapfrog_step<T: Target + ?Sized>(
    target: &T,
    z: &PhasePoint,
    epsilon: f64,
) -> Result<PhasePoint, IntegrateError> {
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(IntegrateError::InvalidConfig(
            "step size must be finite and positive".into(),
        ));
    }
    let mut grad = vec![0.0; z.dim()];
    target.gradient_into(&z.x, &mut grad)?;
    let half = 0.5 * epsilon;

    let p_half: Vec<f64> = z.p.iter().zip(&grad).map(|(p, g)| p - half * g).collect();
    let x_next: Vec<f64> = z
        .x
        .iter()
        .zip(&p_half)
        .map(|(x, ph)| x + epsilon * ph)
        .collect();
    if x_next.iter().any(|v| !v.is_finite()) {
        return Err(IntegrateError::Diverged {
            last_finite_step: 0,
        });
    }

    target.gradient_into(&x_next, &mut grad)?;
    let p_next: Vec<f64> = p_half
        .iter()
        .zip(&grad)
        .map(|(ph, g)| ph - half * g)
        .collect();
    if p_next.iter().any(|v| !v.is_finite()) {
        return Err(IntegrateError::Diverged {
            last_finite_step: 0,
        });
    }
    Ok(PhasePoint {
        x: x_next,
        p: p_next,
    })
}

/// Runs `cfg.steps()` leapfrog steps from `z0` and records the full path.
///
/// Divergence (any non-finite coordinate, gradient, or energy along the
/// way) is reported as an error carrying the index of the last finite
/// point; callers treat it as a proposal that is rejected outright.
pub fn integrate<T: Target + ?Sized>(
    target: &T,
    z0: &PhasePoint,
    cfg: &LeapfrogConfig,
) -> Result<Trajectory, IntegrateError> {
    if z0.x.len() != z0.p.len() {
        return Err(IntegrateError::MismatchedPhase {
            x_len: z0.x.len(),
            p_len: z0.p.len(),
        });
    }
    if !z0.is_finite() {
        return Err(TargetError::NonFiniteInput.into());
    }
    let steps = cfg.steps() as usize;
    let mut points = Vec::with_capacity(steps + 1);
    let mut energies = Vec::with_capacity(steps + 1);

    let h0 = hamiltonian(target, z0)?;
    if !h0.is_finite() {
        return Err(IntegrateError::Diverged {
            last_finite_step: 0,
        });
    }
    points.push(z0.clone());
    energies.push(h0);

    for i in 0..steps {
        let next = match leapfrog_step(target, &points[i], cfg.epsilon()) {
            Ok(z) => z,
            Err(IntegrateError::Diverged { .. }) => {
                return Err(IntegrateError::Diverged {
                    last_finite_step: i,
                })
            }
            Err(e) => return Err(e),
        };
        let h = hamiltonian(target, &next)?;
        if !h.is_finite() {
            return Err(IntegrateError::Diverged {
                last_finite_step: i,
            });
        }
        points.push(next);
        energies.push(h);
    }
    Ok(Trajectory {
        points,
        epsilon: cfg.epsilon(),
        energies,
    })
}

/// Endpoint position via the closed-form decomposition
///
/// ```text
/// x_L = x0 - (L eps^2 / 2) grad U(x0)
///          - eps^2 * sum_{i=1}^{L-1} (L - i) grad U(x_i)
///          + L eps p0
/// ```
///
/// The interior positions come from running the recursion, but the sum
/// itself is evaluated independently of it.
pub fn marginal_proposal<T: Target + ?Sized>(
    target: &T,
    x0: &[f64],
    p0: &[f64],
    cfg: &LeapfrogConfig,
) -> Result<Vec<f64>, IntegrateError> {
    let z0 = PhasePoint::new(x0.to_vec(), p0.to_vec())?;
    let traj = integrate(target, &z0, cfg)?;
    let eps = cfg.epsilon();
    let l = cfg.steps() as usize;
    let lf = l as f64;

    let g0 = target.gradient(x0)?;
    let mut out: Vec<f64> = (0..x0.len())
        .map(|j| x0[j] - 0.5 * lf * eps * eps * g0[j] + lf * eps * p0[j])
        .collect();
    for i in 1..l {
        let gi = target.gradient(&traj.points[i].x)?;
        let w = eps * eps * (lf - i as f64);
        for (o, g) in out.iter_mut().zip(&gi) {
            *o -= w * g;
        }
    }
    Ok(out)
}

/// Endpoint momentum via the trapezoidal gradient sum
///
/// ```text
/// p_L = p0 - (eps/2) grad U(x0) - eps * sum_{i=1}^{L-1} grad U(x_i)
///          - (eps/2) grad U(x_L)
/// ```
pub fn final_momentum<T: Target + ?Sized>(
    target: &T,
    traj: &Trajectory,
) -> Result<Vec<f64>, IntegrateError> {
    let eps = traj.epsilon;
    let l = traj.steps();
    let z0 = traj.initial();
    let g0 = target.gradient(&z0.x)?;
    let gl = target.gradient(&traj.final_point().x)?;
    let mut out: Vec<f64> = (0..z0.dim())
        .map(|j| z0.p[j] - 0.5 * eps * (g0[j] + gl[j]))
        .collect();
    for point in &traj.points[1..l] {
        let gi = target.gradient(&point.x)?;
        for (o, g) in out.iter_mut().zip(&gi) {
            *o -= eps * g;
        }
    }
    Ok(out)
}

/// Forward and reverse drift components of a trajectory.
///
/// `forward` collects the gradient drift accumulated from the start,
/// `reverse` the same quantity seen from the endpoint looking back:
///
/// ```text
/// psi   = (L eps^2 / 2) grad U(x0)  + eps^2 sum_{i=1}^{L-1} (L - i) grad U(x_i)
/// psi_r = (L eps^2 / 2) grad U(x_L) + eps^2 sum_{i=1}^{L-1}   i     grad U(x_i)
/// ```
///
/// They satisfy `x_L - x0 = L eps p0 - psi` and
/// `x_L - x0 = L eps p_L + psi_r`, so the pair determines both endpoint
/// momenta of the leg.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiDrifts {
    pub forward: Vec<f64>,
    pub reverse: Vec<f64>,
}

pub fn psi_drifts<T: Target + ?Sized>(
    target: &T,
    traj: &Trajectory,
) -> Result<PsiDrifts, IntegrateError> {
    let eps = traj.epsilon;
    let l = traj.steps();
    let lf = l as f64;
    let d = traj.initial().dim();

    let g0 = target.gradient(&traj.initial().x)?;
    let gl = target.gradient(&traj.final_point().x)?;
    let mut forward: Vec<f64> = g0.iter().map(|g| 0.5 * lf * eps * eps * g).collect();
    let mut reverse: Vec<f64> = gl.iter().map(|g| 0.5 * lf * eps * eps * g).collect();
    for (i, point) in traj.points[1..l].iter().enumerate() {
        let gi = target.gradient(&point.x)?;
        let step_idx = (i + 1) as f64;
        for j in 0..d {
            forward[j] += eps * eps * (lf - step_idx) * gi[j];
            reverse[j] += eps * eps * step_idx * gi[j];
        }
    }
    Ok(PsiDrifts { forward, reverse })
}

/// Integrates forward, flips the momentum, integrates again, and returns
/// the max-norm distance from the doubly-flipped result to `z0`. Exact
/// reversibility would give zero.
pub fn reversibility_residual<T: Target + ?Sized>(
    target: &T,
    z0: &PhasePoint,
    cfg: &LeapfrogConfig,
) -> Result<f64, IntegrateError> {
    let fwd = integrate(target, z0, cfg)?;
    let end = fwd.final_point();
    let flipped = PhasePoint {
        x: end.x.clone(),
        p: end.p.iter().map(|p| -p).collect(),
    };
    let back = integrate(target, &flipped, cfg)?;
    let ret = back.final_point();
    let mut worst = 0.0f64;
    for j in 0..z0.dim() {
        worst = worst.max((ret.x[j] - z0.x[j]).abs());
        worst = worst.max((-ret.p[j] - z0.p[j]).abs());
    }
    Ok(worst)
}

/// Default perturbation for [`volume_residual`].
pub fn default_jacobian_step(z0: &PhasePoint) -> f64 {
    let norm = z0
        .x
        .iter()
        .chain(z0.p.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    1e-5 * norm.max(1.0)
}

/// Deviation `|det J - 1|` of the central finite-difference Jacobian of
/// the `L`-step map at `z0`. Volume preservation would give zero.
pub fn volume_residual<T: Target + ?Sized>(
    target: &T,
    z0: &PhasePoint,
    cfg: &LeapfrogConfig,
    h: f64,
) -> Result<f64, IntegrateError> {
    if !h.is_finite() || h <= 0.0 {
        return Err(IntegrateError::InvalidConfig(
            "jacobian perturbation must be finite and positive".into(),
        ));
    }
    let d = z0.dim();
    let n = 2 * d;
    let mut jac = vec![vec![0.0f64; n]; n];
    for j in 0..n {
        let mut plus = z0.clone();
        let mut minus = z0.clone();
        if j < d {
            plus.x[j] += h;
            minus.x[j] -= h;
        } else {
            plus.p[j - d] += h;
            minus.p[j - d] -= h;
        }
        let fp = integrate(target, &plus, cfg)?;
        let fm = integrate(target, &minus, cfg)?;
        let zp = fp.final_point();
        let zm = fm.final_point();
        for i in 0..d {
            jac[i][j] = (zp.x[i] - zm.x[i]) / (2.0 * h);
            jac[d + i][j] = (zp.p[i] - zm.p[i]) / (2.0 * h);
        }
    }
    Ok((det_in_place(&mut jac) - 1.0).abs())
}

/// Determinant by Gaussian elimination with partial pivoting.
fn det_in_place(mat: &mut [Vec<f64>]) -> f64 {
    let n = mat.len();
    let mut det = 1.0f64;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|a, b| mat[*a][col].abs().total_cmp(&mat[*b][col].abs()))
            .expect("non-empty column range");
        if mat[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            mat.swap(pivot, col);
            det = -det;
        }
        det *= mat[col][col];
        for row in col + 1..n {
            let factor = mat[row][col] / mat[col][col];
            for k in col..n {
                let sub = factor * mat[col][k];
                mat[row][k] -= sub;
            }
        }
    }
    det
}
