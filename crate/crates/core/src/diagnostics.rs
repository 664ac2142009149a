//! Monte Carlo probes for tail stability of an HMC kernel.
//!
//! Each probe fixes a start point, replays many independent transitions
//! from it, and summarizes one aspect of the kernel's behaviour there:
//! how strongly the chain is pulled inward ([`drift_ratio`]), how much
//! proposal mass is rejected ([`rejection_prob`]), whether rejections
//! happen on inward moves ([`inward_rejection_mass`]), and how far
//! proposals travel ([`ball_mass`]). [`sc_scan`] inspects the gradient
//! field itself along rays, and [`tail_classify`] maps a tail exponent
//! to the qualitative behaviour expected of the sampler.

use crate::integrator::{IntegrateError, Trajectory};
use crate::kernels::{hmc_step, HmcKernelConfig};
use crate::targets::Target;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Proposals with acceptance probability below `1 - ACCEPT_SLACK` count
/// as genuine rejections; anything closer to 1 is roundoff.
pub const ACCEPT_SLACK: f64 = 1e-12;

pub const MIN_PROBE_DRAWS: u64 = 100;

/// Sample mean, its standard error, and the sample count behind them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n: u64,
}

struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn new() -> Self {
        Self {
            n: 0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    fn finish(self) -> MonteCarloEstimate {
        let stderr = if self.n > 1 {
            (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
        } else {
            f64::INFINITY
        };
        MonteCarloEstimate {
            estimate: self.mean,
            stderr,
            n: self.n,
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Geometric drift estimate at one start point.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftEstimate {
    pub x0: Vec<f64>,
    pub s: f64,
    pub n: u64,
    pub ratio_mean: f64,
    pub ratio_stderr: f64,
}

/// Estimates `E[exp(s * (|x1| - |x0|))]` over `n` independent
/// transitions from `x0`. Values below 1 mean the radius contracts in
/// expectation at rate `s`; values at or above 1 mean no contraction.
pub fn drift_ratio<T: Target + ?Sized, R: Rng>(
    kernel: &HmcKernelConfig,
    target: &T,
    x0: &[f64],
    s: f64,
    n: u64,
    rng: &mut R,
) -> DriftEstimate {
    assert!(s.is_finite() && s > 0.0, "drift rate must be positive");
    assert!(n >= MIN_PROBE_DRAWS, "drift probe needs at least {MIN_PROBE_DRAWS} draws");
    let r0 = norm(x0);
    let mut acc = Welford::new();
    for _ in 0..n {
        let rec = hmc_step(kernel, target, x0, rng);
        acc.push((s * (norm(&rec.x1) - r0)).exp());
    }
    let est = acc.finish();
    DriftEstimate {
        x0: x0.to_vec(),
        s,
        n,
        ratio_mean: est.estimate,
        ratio_stderr: est.stderr,
    }
}

/// Estimates the rejection probability `1 - E[alpha(x0, proposal)]` by
/// averaging the acceptance probability itself, not the accept coin.
/// Divergent proposals contribute zero acceptance.
pub fn rejection_prob<T: Target + ?Sized, R: Rng>(
    kernel: &HmcKernelConfig,
    target: &T,
    x0: &[f64],
    n: u64,
    rng: &mut R,
) -> MonteCarloEstimate {
    assert!(n >= MIN_PROBE_DRAWS, "rejection probe needs at least {MIN_PROBE_DRAWS} draws");
    let mut acc = Welford::new();
    for _ in 0..n {
        let rec = hmc_step(kernel, target, x0, rng);
        acc.push(rec.accept_prob);
    }
    let mut est = acc.finish();
    est.estimate = 1.0 - est.estimate;
    est
}

/// Fraction of proposals that move inward (`|proposal| <= |x0|`) yet are
/// still rejectable (`alpha < 1 - ACCEPT_SLACK`). For a kernel that only
/// ever rejects outward moves this is zero.
pub fn inward_rejection_mass<T: Target + ?Sized, R: Rng>(
    kernel: &HmcKernelConfig,
    target: &T,
    x0: &[f64],
    n: u64,
    rng: &mut R,
) -> MonteCarloEstimate {
    assert!(n >= MIN_PROBE_DRAWS, "inward probe needs at least {MIN_PROBE_DRAWS} draws");
    let r0 = norm(x0);
    let mut acc = Welford::new();
    for _ in 0..n {
        let rec = hmc_step(kernel, target, x0, rng);
        let inward_and_rejectable = match &rec.proposal {
            Some(prop) => norm(prop) <= r0 && rec.accept_prob < 1.0 - ACCEPT_SLACK,
            None => false,
        };
        acc.push(inward_and_rejectable as u64 as f64);
    }
    acc.finish()
}

/// Fraction of proposal mass inside the ball of radius `delta` around
/// `x0`. With a bounded step law and bounded gradients this stays close
/// to 1 for `delta` past the worst-case displacement, which is exactly
/// the random-walk obstruction to geometric ergodicity on heavy tails.
pub fn ball_mass<T: Target + ?Sized, R: Rng>(
    kernel: &HmcKernelConfig,
    target: &T,
    x0: &[f64],
    delta: f64,
    n: u64,
    rng: &mut R,
) -> MonteCarloEstimate {
    assert!(delta.is_finite() && delta > 0.0, "ball radius must be positive");
    assert!(n >= MIN_PROBE_DRAWS, "ball probe needs at least {MIN_PROBE_DRAWS} draws");
    let mut acc = Welford::new();
    for _ in 0..n {
        let rec = hmc_step(kernel, target, x0, rng);
        let inside = match &rec.proposal {
            Some(prop) => {
                let dist2: f64 = prop
                    .iter()
                    .zip(x0)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                dist2.sqrt() < delta
            }
            None => false,
        };
        acc.push(inside as u64 as f64);
    }
    acc.finish()
}

/// One radius of a gradient-field scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScScanRow {
    pub radius: f64,
    pub grad_norm: f64,
    /// Cosine between the gradient and the outward ray; positive means
    /// the potential pushes back toward the origin.
    pub inward_cosine: f64,
    /// `|grad U| / radius`, whose limit distinguishes sublinear,
    /// linear, and superlinear gradient growth.
    pub growth_ratio: f64,
}

/// Evaluates the gradient along `radius * direction` for each radius.
/// Radii where the gradient is undefined produce no row.
pub fn sc_scan<T: Target + ?Sized>(
    target: &T,
    direction: &[f64],
    radii: &[f64],
) -> Vec<ScScanRow> {
    assert_eq!(direction.len(), target.dim(), "direction dimension mismatch");
    assert!(
        (norm(direction) - 1.0).abs() <= 1e-9,
        "direction must be a unit vector"
    );
    assert!(
        radii.windows(2).all(|w| w[0] < w[1]) && radii.iter().all(|r| *r > 0.0),
        "radii must be positive and strictly increasing"
    );
    let mut rows = Vec::with_capacity(radii.len());
    for &r in radii {
        let x: Vec<f64> = direction.iter().map(|d| r * d).collect();
        let Ok(grad) = target.gradient(&x) else {
            continue;
        };
        let gn = norm(&grad);
        let inward_cosine = if gn > 0.0 {
            grad.iter().zip(&x).map(|(g, xi)| g * xi).sum::<f64>() / (gn * r)
        } else {
            0.0
        };
        rows.push(ScScanRow {
            radius: r,
            grad_norm: gn,
            inward_cosine,
            growth_ratio: gn / r,
        });
    }
    rows
}

/// Two sides of the inward-acceptance inequality for one trajectory.
///
/// `lhs` is the potential gap corrected by its trapezoidal quadrature
/// estimate, `rhs` the difference of squared drift norms scaled by the
/// squared leg length. `lhs <= rhs` holds exactly when the trajectory
/// would be accepted with certainty, because
/// `log_ratio = rhs - lhs` up to roundoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InwardAcceptance {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn inward_acceptance_check<T: Target + ?Sized>(
    target: &T,
    traj: &Trajectory,
) -> Result<InwardAcceptance, IntegrateError> {
    let l = traj.steps();
    let lf = l as f64;
    let eps = traj.epsilon;
    let x0 = &traj.initial().x;
    let xl = &traj.final_point().x;

    let u0 = target.potential(x0)?;
    let ul = target.potential(xl)?;
    let gsum = trapezoid_gradient_sum(target, traj)?;
    let u_hat = x0
        .iter()
        .zip(xl)
        .zip(&gsum)
        .map(|((a, b), g)| (b - a) * g)
        .sum::<f64>()
        / (2.0 * lf);

    let drifts = crate::integrator::psi_drifts(target, traj)?;
    let fwd2: f64 = drifts.forward.iter().map(|v| v * v).sum();
    let rev2: f64 = drifts.reverse.iter().map(|v| v * v).sum();
    let rhs = (fwd2 - rev2) / (2.0 * lf * lf * eps * eps);
    let lhs = (ul - u0) - u_hat;
    Ok(InwardAcceptance {
        lhs,
        rhs,
        holds: lhs <= rhs,
    })
}

/// Max-norm residual of the drift-sum identity
/// `psi + psi_r = (L eps^2 / 2) * (g_0 + g_L + 2 * interior gradients)`.
pub fn quadrature_identity_residual<T: Target + ?Sized>(
    target: &T,
    traj: &Trajectory,
) -> Result<f64, IntegrateError> {
    let lf = traj.steps() as f64;
    let eps = traj.epsilon;
    let drifts = crate::integrator::psi_drifts(target, traj)?;
    let gsum = trapezoid_gradient_sum(target, traj)?;
    let mut worst = 0.0f64;
    for j in 0..gsum.len() {
        let lhs = drifts.forward[j] + drifts.reverse[j];
        let rhs = 0.5 * lf * eps * eps * gsum[j];
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// `g_0 + g_L + 2 * sum of interior gradients`, the trapezoidal weight
/// vector shared by the two identities above.
fn trapezoid_gradient_sum<T: Target + ?Sized>(
    target: &T,
    traj: &Trajectory,
) -> Result<Vec<f64>, IntegrateError> {
    let l = traj.steps();
    let mut sum = target.gradient(&traj.initial().x)?;
    let gl = target.gradient(&traj.final_point().x)?;
    for (s, g) in sum.iter_mut().zip(&gl) {
        *s += g;
    }
    for point in &traj.points[1..l] {
        let gi = target.gradient(&point.x)?;
        for (s, g) in sum.iter_mut().zip(&gi) {
            *s += 2.0 * g;
        }
    }
    Ok(sum)
}

/// Qualitative sampler behaviour implied by the tail exponent of
/// `U(x) ~ |x|^beta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailClass {
    /// `beta < 1`: gradients vanish, the chain random-walks in the tails.
    HeavyNongeometric,
    /// `1 <= beta < 2`: bounded inward pull, geometric convergence.
    Geometric,
    /// `beta = 2`: linear gradient growth, geometric for small enough steps.
    BoundaryGaussian,
    /// `beta > 2`: superlinear gradients, discrete steps overshoot.
    LightNongeometric,
}

impl TailClass {
    pub fn label(&self) -> &'static str {
        match self {
            Self::HeavyNongeometric => "heavy_nongeometric",
            Self::Geometric => "geometric",
            Self::BoundaryGaussian => "boundary_gaussian",
            Self::LightNongeometric => "light_nongeometric",
        }
    }
}

impl std::fmt::Display for TailClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Classifies a tail exponent `beta > 0`.
pub fn tail_classify(beta: f64) -> TailClass {
    assert!(beta.is_finite() && beta > 0.0, "tail exponent must be positive");
    if beta < 1.0 {
        TailClass::HeavyNongeometric
    } else if beta < 2.0 {
        TailClass::Geometric
    } else if beta == 2.0 {
        TailClass::BoundaryGaussian
    } else {
        TailClass::LightNongeometric
    }
}

/// Log-spaced scan radii from 1 to 1000, half-decade spacing.
pub fn probe_radii() -> Vec<f64> {
    (0..=6).map(|k| 10f64.powf(k as f64 / 2.0)).collect()
}

const DIRECTION_SEED: u64 = 314_159_265_358_979_323;

/// Coordinate axes plus eight fixed pseudo-random unit vectors. The
/// random part is seeded by a constant so scans are reproducible.
pub fn probe_directions(dim: usize) -> Vec<Vec<f64>> {
    assert!(dim >= 1);
    let mut dirs = Vec::with_capacity(dim + 8);
    for i in 0..dim {
        let mut axis = vec![0.0; dim];
        axis[i] = 1.0;
        dirs.push(axis);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(DIRECTION_SEED);
    while dirs.len() < dim + 8 {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-6 {
            dirs.push(v.iter().map(|c| c / n).collect());
        }
    }
    dirs
}
