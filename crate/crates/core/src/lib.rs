//! Hamiltonian Monte Carlo with geometric-stability diagnostics.
//!
//! The crate has three layers:
//!
//! * sampling machinery: [`targets`] defines potentials and gradients,
//!   [`integrator`] the leapfrog flow, and [`kernels`] the
//!   Metropolis-adjusted HMC transition;
//! * [`diagnostics`]: Monte Carlo probes that measure drift ratios,
//!   rejection mass, and tail growth of a kernel on a given target,
//!   the quantities that decide whether the chain contracts from far
//!   out in the tails or random-walks there;
//! * [`dynamic1d`]: an idealized one-dimensional sampler that draws a
//!   uniform integration time along the exact Hamiltonian orbit instead
//!   of a fixed leapfrog length, together with orbit-average utilities
//!   used to study its return behaviour.
//!
//! The [`cli`] module backs the `hmc-ergo` binary: config parsing,
//! experiment execution, and CSV/JSONL report emission.
//!
//! ```
//! use hmc_ergo::kernels::{chain_rng, run_chain, HmcKernelConfig, StepCountDistribution};
//! use hmc_ergo::targets::GaussianTarget;
//!
//! let target = GaussianTarget::new(vec![1.0]).unwrap();
//! let cfg = HmcKernelConfig::new(0.9, StepCountDistribution::Uniform { max: 10 }).unwrap();
//! let mut rng = chain_rng(7, 0);
//! let (samples, summary) = run_chain(&cfg, &target, &[0.0], 2_000, &mut rng);
//! assert_eq!(samples.len(), 2_000);
//! assert!(summary.acceptance_rate() > 0.5);
//! ```

pub mod cli;
pub mod diagnostics;
pub mod dynamic1d;
pub mod integrator;
pub mod kernels;
pub mod targets;
