//! Metropolis-adjusted HMC transitions.
//!
//! A transition draws a Gaussian momentum, a step count from a bounded
//! law, runs the leapfrog leg, and accepts with probability
//! `min(1, exp(H(z0) - H(z_L)))`. All randomness for one transition
//! comes from one stream in a fixed order: momentum first, then the
//! step count, then the acceptance uniform. Identical seeds therefore
//! give bit-identical transition records.

use crate::integrator::{integrate, IntegrateError, LeapfrogConfig, PhasePoint, Trajectory};
use crate::targets::{Target, TargetError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("invalid kernel configuration: {0}")]
    InvalidConfig(String),
}

/// Distribution of the leapfrog step count `L`.
///
/// Both laws have bounded support and place mass on `L = 1`, either
/// trivially (fixed single step) or with probability `1/max` (uniform).
/// Bounded support is what keeps worst-case proposal displacement under
/// control in the tails, so unbounded laws are rejected at config time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepCountDistribution {
    Fixed(u32),
    Uniform { max: u32 },
}

impl StepCountDistribution {
    pub fn validate(&self) -> Result<(), KernelError> {
        let bound = self.max_steps();
        if bound == 0 {
            return Err(KernelError::InvalidConfig(
                "step count bound must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Largest step count the law can produce.
    pub fn max_steps(&self) -> u32 {
        match self {
            Self::Fixed(l) => *l,
            Self::Uniform { max } => *max,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        match self {
            Self::Fixed(l) => *l,
            Self::Uniform { max } => rng.random_range(1..=*max),
        }
    }
}

/// Step size, step-count law, and optional diagonal mass matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HmcKernelConfig {
    epsilon: f64,
    steps: StepCountDistribution,
    mass_diag: Option<Vec<f64>>,
}

impl HmcKernelConfig {
    pub fn new(epsilon: f64, steps: StepCountDistribution) -> Result<Self, KernelError> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(KernelError::InvalidConfig(
                "step size must be finite and positive".into(),
            ));
        }
        steps.validate()?;
        Ok(Self {
            epsilon,
            steps,
            mass_diag: None,
        })
    }

    /// Adds a diagonal mass matrix; momenta are drawn from `N(0, M)`.
    pub fn with_mass_diag(mut self, mass: Vec<f64>) -> Result<Self, KernelError> {
        if mass.is_empty() {
            return Err(KernelError::InvalidConfig(
                "mass diagonal must be non-empty".into(),
            ));
        }
        if mass.iter().any(|m| !m.is_finite() || *m <= 0.0) {
            return Err(KernelError::InvalidConfig(
                "mass diagonal entries must be finite and positive".into(),
            ));
        }
        self.mass_diag = Some(mass);
        Ok(self)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn steps(&self) -> StepCountDistribution {
        self.steps
    }

    pub fn mass_diag(&self) -> Option<&[f64]> {
        self.mass_diag.as_deref()
    }
}

/// Everything observed during one attempted transition.
///
/// On divergence the proposal is absent, `log_ratio` is negative
/// infinity, and the chain stays put.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub x0: Vec<f64>,
    pub p0: Vec<f64>,
    pub steps: u32,
    pub proposal: Option<Vec<f64>>,
    pub log_ratio: f64,
    pub accept_prob: f64,
    pub accepted: bool,
    pub x1: Vec<f64>,
    pub diverged: bool,
}

/// Log acceptance ratio `H(z0) - H(z_L)` of a finite trajectory.
pub fn log_accept_ratio(traj: &Trajectory) -> f64 {
    traj.energies[0] - traj.energies[traj.energies.len() - 1]
}

/// Acceptance probability `min(1, exp(H(z0) - H(z_L)))`, evaluated in
/// log space so large energy gaps cannot overflow.
pub fn accept_prob(traj: &Trajectory) -> f64 {
    let delta = log_accept_ratio(traj);
    if delta >= 0.0 {
        1.0
    } else {
        delta.exp()
    }
}

enum Leg {
    Finite { proposal: Vec<f64>, log_ratio: f64 },
    Diverged,
}

fn run_leg<T: Target + ?Sized>(
    target: &T,
    x0: Vec<f64>,
    p0: Vec<f64>,
    cfg: &LeapfrogConfig,
) -> Leg {
    let z0 = PhasePoint { x: x0, p: p0 };
    match integrate(target, &z0, cfg) {
        Ok(traj) => Leg::Finite {
            log_ratio: log_accept_ratio(&traj),
            proposal: traj.final_point().x.clone(),
        },
        Err(IntegrateError::Diverged { .. })
        | Err(IntegrateError::Target(TargetError::SingularPoint)) => Leg::Diverged,
        Err(e) => panic!("hmc transition violated the integrator contract: {e}"),
    }
}

struct MassScaled<'a, T: Target + ?Sized> {
    inner: &'a T,
    inv_sqrt: Vec<f64>,
}

impl<T: Target + ?Sized> MassScaled<'_, T> {
    fn unscale(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.inv_sqrt).map(|(v, s)| v * s).collect()
    }
}

impl<T: Target + ?Sized> Target for MassScaled<'_, T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn potential(&self, x: &[f64]) -> Result<f64, TargetError> {
        self.inner.potential(&self.unscale(x))
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), TargetError> {
        self.inner.gradient_into(&self.unscale(x), out)?;
        for (o, s) in out.iter_mut().zip(&self.inv_sqrt) {
            *o *= s;
        }
        Ok(())
    }
}

/// One HMC transition from `x0`.
///
/// Draw order within the stream is momentum, then step count, then the
/// acceptance uniform. The acceptance test is `log(u) < log_ratio`, with
/// `u = 0` accepting any finite ratio.
pub fn hmc_step<T: Target + ?Sized, R: Rng>(
    cfg: &HmcKernelConfig,
    target: &T,
    x0: &[f64],
    rng: &mut R,
) -> TransitionRecord {
    let d = target.dim();
    assert_eq!(x0.len(), d, "start point dimension must match the target");
    assert!(
        x0.iter().all(|v| v.is_finite()),
        "start point must be finite"
    );
    if let Some(mass) = cfg.mass_diag() {
        assert_eq!(mass.len(), d, "mass diagonal must match the target dimension");
    }

    let raw: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let steps = cfg.steps.sample(rng);
    let u: f64 = rng.random();

    let lf = LeapfrogConfig::new(cfg.epsilon, steps).expect("validated kernel config");
    let (p0, leg) = match cfg.mass_diag() {
        None => (
            raw.clone(),
            run_leg(target, x0.to_vec(), raw, &lf),
        ),
        Some(mass) => {
            let sqrt_m: Vec<f64> = mass.iter().map(|m| m.sqrt()).collect();
            let p0: Vec<f64> = raw.iter().zip(&sqrt_m).map(|(r, s)| r * s).collect();
            let scaled = MassScaled {
                inner: target,
                inv_sqrt: sqrt_m.iter().map(|s| 1.0 / s).collect(),
            };
            let x0_scaled: Vec<f64> = x0.iter().zip(&sqrt_m).map(|(x, s)| x * s).collect();
            let leg = match run_leg(&scaled, x0_scaled, raw, &lf) {
                Leg::Finite {
                    proposal,
                    log_ratio,
                } => Leg::Finite {
                    proposal: scaled.unscale(&proposal),
                    log_ratio,
                },
                Leg::Diverged => Leg::Diverged,
            };
            (p0, leg)
        }
    };

    match leg {
        Leg::Finite {
            proposal,
            log_ratio,
        } => {
            let accept_prob = if log_ratio >= 0.0 {
                1.0
            } else {
                log_ratio.exp()
            };
            let accepted = u.ln() < log_ratio;
            let x1 = if accepted {
                proposal.clone()
            } else {
                x0.to_vec()
            };
            TransitionRecord {
                x0: x0.to_vec(),
                p0,
                steps,
                proposal: Some(proposal),
                log_ratio,
                accept_prob,
                accepted,
                x1,
                diverged: false,
            }
        }
        Leg::Diverged => TransitionRecord {
            x0: x0.to_vec(),
            p0,
            steps,
            proposal: None,
            log_ratio: f64::NEG_INFINITY,
            accept_prob: 0.0,
            accepted: false,
            x1: x0.to_vec(),
            diverged: true,
        },
    }
}

/// Langevin special case: one leapfrog step regardless of the configured
/// step-count law. With a shared stream it consumes the same draws as
/// [`hmc_step`] under a fixed single-step law.
pub fn mala_step<T: Target + ?Sized, R: Rng>(
    cfg: &HmcKernelConfig,
    target: &T,
    x0: &[f64],
    rng: &mut R,
) -> TransitionRecord {
    let mut single = HmcKernelConfig::new(cfg.epsilon, StepCountDistribution::Fixed(1))
        .expect("validated kernel config");
    if let Some(mass) = cfg.mass_diag() {
        single = single
            .with_mass_diag(mass.to_vec())
            .expect("validated kernel config");
    }
    hmc_step(&single, target, x0, rng)
}

/// Counts kept while running a chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainSummary {
    pub transitions: u64,
    pub accepted: u64,
    pub divergences: u64,
    pub mean_steps: f64,
}

impl ChainSummary {
    pub fn acceptance_rate(&self) -> f64 {
        if self.transitions == 0 {
            0.0
        } else {
            self.accepted as f64 / self.transitions as f64
        }
    }
}

/// Runs `n` transitions from `x0` and returns the visited states
/// (post-transition, one per step) plus summary counts.
pub fn run_chain<T: Target + ?Sized, R: Rng>(
    cfg: &HmcKernelConfig,
    target: &T,
    x0: &[f64],
    n: u64,
    rng: &mut R,
) -> (Vec<Vec<f64>>, ChainSummary) {
    let mut current = x0.to_vec();
    let mut samples = Vec::with_capacity(n as usize);
    let mut summary = ChainSummary {
        transitions: n,
        accepted: 0,
        divergences: 0,
        mean_steps: 0.0,
    };
    let mut step_total: u64 = 0;
    for _ in 0..n {
        let rec = hmc_step(cfg, target, &current, rng);
        summary.accepted += rec.accepted as u64;
        summary.divergences += rec.diverged as u64;
        step_total += u64::from(rec.steps);
        current.clone_from(&rec.x1);
        samples.push(rec.x1);
    }
    if n > 0 {
        summary.mean_steps = step_total as f64 / n as f64;
    }
    (samples, summary)
}

/// Stream for chain `chain_index` under a master seed. Streams never
/// collide across chain indices, so chains can run concurrently and
/// still reproduce byte-identical output.
pub fn chain_rng(master_seed: u64, chain_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(chain_index);
    rng
}

/// Stream for probe `probe_index`, offset so probes never share a stream
/// with chains under the same master seed.
pub fn probe_rng(master_seed: u64, probe_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((1u64 << 32) + probe_index);
    rng
}
