//! Experiment front end behind the command-line binary.
//!
//! Experiments are described by a TOML document with sections `target`,
//! `kernel`, `sample`, `probes`, `sweep`, and `dynamic`, all optional;
//! missing values fall back to defaults. Parsing is strict (unknown
//! keys are rejected) and validation reports every problem at once
//! rather than stopping at the first.
//!
//! A run writes machine-readable artifacts into `output_dir`: sampling
//! experiments write `samples.jsonl` with one record per transition,
//! and every experiment writes CSV reports whose rows share one probe
//! kind per file. Report headers carry the config hash and library
//! version so results stay attributable. Outputs are byte-identical
//! for identical config and seed, except for the wall-time column.

use crate::diagnostics::{
    ball_mass, drift_ratio, inward_rejection_mass, probe_radii, rejection_prob, sc_scan,
    tail_classify,
};
use crate::dynamic1d::{
    dynamic_drift_estimate, exhaustion_time, period, virial_residual, Dynamic1dError, FlowConfig,
    Phase1D, SmoothExpFamily1D,
};
use crate::kernels::{
    chain_rng, hmc_step, probe_rng, HmcKernelConfig, StepCountDistribution, TransitionRecord,
};
use crate::targets::{ExpFamilyTarget, GaussianTarget, Target};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

const DEFAULT_EPSILON: f64 = 0.9;
const DEFAULT_MAX_STEPS: u32 = 10;
const DEFAULT_CHAIN_STEPS: u64 = 1_000;
const DEFAULT_PROBE_DRAWS: u64 = 10_000;
const DEFAULT_SWEEP_BETAS: [f64; 5] = [0.5, 1.0, 1.5, 2.0, 4.0];
const MIN_PROBE_DRAWS: u64 = crate::diagnostics::MIN_PROBE_DRAWS;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
    #[error("accuracy failure: {0}")]
    Accuracy(String),
    #[error("report schema error: {0}")]
    Schema(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Internal(String),
}

impl ExperimentError {
    /// Process exit code: 2 for configuration problems, 3 for accuracy
    /// failures in the dynamic sampler, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Validation(_) => 2,
            ExperimentError::Accuracy(_) => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Sample,
    Diagnose,
    Sweep,
    Dynamic,
    DegenerateDemo,
}

impl ExperimentKind {
    fn parse(name: &str) -> Option<Self> {
        match name {
            "sample" => Some(Self::Sample),
            "diagnose" => Some(Self::Diagnose),
            "sweep" => Some(Self::Sweep),
            "dynamic" => Some(Self::Dynamic),
            "degenerate-demo" => Some(Self::DegenerateDemo),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    Gaussian { precision: Vec<f64> },
    ExpFamily { alpha: f64, beta: f64, kappa: f64, dim: usize },
}

impl TargetSpec {
    pub fn dim(&self) -> usize {
        match self {
            TargetSpec::Gaussian { precision } => precision.len(),
            TargetSpec::ExpFamily { dim, .. } => *dim,
        }
    }

    pub fn build(&self) -> Box<dyn Target> {
        match self {
            TargetSpec::Gaussian { precision } => Box::new(
                GaussianTarget::new(precision.clone()).expect("validated gaussian target"),
            ),
            TargetSpec::ExpFamily { alpha, beta, kappa, dim } => Box::new(
                ExpFamilyTarget::new(*alpha, *beta, *kappa, *dim)
                    .expect("validated exponential-family target"),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub epsilon: f64,
    pub steps: StepCountDistribution,
    pub mass: Option<Vec<f64>>,
}

impl KernelSpec {
    pub fn build(&self) -> HmcKernelConfig {
        let cfg = HmcKernelConfig::new(self.epsilon, self.steps).expect("validated kernel");
        match &self.mass {
            Some(m) => cfg.with_mass_diag(m.clone()).expect("validated mass"),
            None => cfg,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSpec {
    pub steps: u64,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeSpec {
    DriftRatio { x0: Vec<f64>, s: f64, n: u64 },
    Rejection { x0: Vec<f64>, n: u64 },
    InwardRejection { x0: Vec<f64>, n: u64 },
    BallMass { x0: Vec<f64>, delta: f64, n: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynamicProbe {
    Drift,
    Virial,
    Period,
    Exhaustion,
}

impl DynamicProbe {
    fn parse(name: &str) -> Option<Self> {
        match name {
            "drift" => Some(Self::Drift),
            "virial" => Some(Self::Virial),
            "period" => Some(Self::Period),
            "exhaustion" => Some(Self::Exhaustion),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicSpec {
    pub beta: f64,
    pub x0: f64,
    pub n: u64,
    pub probe: DynamicProbe,
    pub energy_tol: f64,
    pub max_substeps: u32,
    pub delta: f64,
}

impl DynamicSpec {
    fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            energy_tol: self.energy_tol,
            max_substeps: self.max_substeps,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub betas: Vec<f64>,
    pub alpha: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub chains: u32,
    pub output_dir: PathBuf,
    pub jobs: Option<usize>,
    pub target: TargetSpec,
    pub kernel: KernelSpec,
    pub sample: SampleSpec,
    pub probes: Vec<ProbeSpec>,
    pub sweep: SweepSpec,
    pub dynamic: DynamicSpec,
    /// SHA-256 of the configuration document, echoed in report headers.
    pub config_sha256: String,
}

/// Command-line values that take precedence over the document.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub kind: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub beta: Option<f64>,
    pub epsilon: Option<f64>,
    pub steps: Option<u64>,
    pub x0: Option<Vec<f64>>,
    pub n: Option<u64>,
    pub probe: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    kind: Option<String>,
    seed: Option<u64>,
    chains: Option<u32>,
    output_dir: Option<PathBuf>,
    target: Option<RawTarget>,
    kernel: Option<RawKernel>,
    sample: Option<RawSample>,
    probes: Vec<RawProbe>,
    sweep: Option<RawSweep>,
    dynamic: Option<RawDynamic>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawTarget {
    kind: Option<String>,
    precision: Option<Vec<f64>>,
    alpha: Option<f64>,
    beta: Option<f64>,
    kappa: Option<f64>,
    dim: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawKernel {
    epsilon: Option<f64>,
    steps: Option<RawStepLaw>,
    mass: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawStepLaw {
    law: Option<String>,
    value: Option<u32>,
    max: Option<u32>,
    p: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawSample {
    steps: Option<u64>,
    x0: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawProbe {
    kind: Option<String>,
    x0: Option<Vec<f64>>,
    s: Option<f64>,
    n: Option<u64>,
    delta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawSweep {
    betas: Option<Vec<f64>>,
    alpha: Option<f64>,
    kappa: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawDynamic {
    beta: Option<f64>,
    x0: Option<f64>,
    n: Option<u64>,
    probe: Option<String>,
    energy_tol: Option<f64>,
    max_substeps: Option<u32>,
    delta: Option<f64>,
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ExperimentError> {
    parse_config_with(text, &Overrides::default())
}

/// Like [`parse_config`], with command-line overrides applied before
/// validation so an override cannot smuggle in an invalid value.
pub fn parse_config_with(
    text: &str,
    overrides: &Overrides,
) -> Result<ExperimentConfig, ExperimentError> {
    let sha = {
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect::<String>()
    };
    let mut raw: RawConfig = toml::from_str(text)
        .map_err(|e| ExperimentError::Validation(vec![format!("configuration document: {e}")]))?;
    apply_overrides(&mut raw, overrides);
    validate(raw, overrides, sha)
}

fn apply_overrides(raw: &mut RawConfig, ov: &Overrides) {
    if let Some(seed) = ov.seed {
        raw.seed = Some(seed);
    }
    if let Some(dir) = &ov.output_dir {
        raw.output_dir = Some(dir.clone());
    }
    if let Some(eps) = ov.epsilon {
        raw.kernel.get_or_insert_with(Default::default).epsilon = Some(eps);
    }
    if let Some(steps) = ov.steps {
        raw.sample.get_or_insert_with(Default::default).steps = Some(steps);
    }
    if let Some(x0) = &ov.x0 {
        raw.sample.get_or_insert_with(Default::default).x0 = Some(x0.clone());
        if x0.len() == 1 {
            raw.dynamic.get_or_insert_with(Default::default).x0 = Some(x0[0]);
        }
    }
    if let Some(beta) = ov.beta {
        raw.dynamic.get_or_insert_with(Default::default).beta = Some(beta);
        raw.sweep.get_or_insert_with(Default::default).betas = Some(vec![beta]);
        if let Some(target) = &mut raw.target {
            if target.kind.as_deref() == Some("expfam") {
                target.beta = Some(beta);
            }
        }
    }
    if let Some(n) = ov.n {
        raw.dynamic.get_or_insert_with(Default::default).n = Some(n);
        for probe in &mut raw.probes {
            probe.n = Some(n);
        }
    }
    if let Some(probe) = &ov.probe {
        raw.dynamic.get_or_insert_with(Default::default).probe = Some(probe.clone());
    }
}

struct Check {
    errors: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Self { errors: Vec::new() }
    }

    fn fail(&mut self, field: &str, message: impl std::fmt::Display) {
        self.errors.push(format!("{field}: {message}"));
    }

    fn finite_positive(&mut self, field: &str, value: f64) -> bool {
        if value.is_finite() && value > 0.0 {
            true
        } else {
            self.fail(field, format!("must be finite and positive (got {value})"));
            false
        }
    }

    fn finite_vec(&mut self, field: &str, values: &[f64]) -> bool {
        if values.iter().all(|v| v.is_finite()) {
            true
        } else {
            self.fail(field, "must contain only finite values");
            false
        }
    }
}

fn validate_target(raw: Option<RawTarget>, check: &mut Check) -> Option<TargetSpec> {
    let raw = raw.unwrap_or_default();
    let kind = raw.kind.unwrap_or_else(|| "gaussian".to_string());
    match kind.as_str() {
        "gaussian" => {
            for (name, set) in [
                ("alpha", raw.alpha.is_some()),
                ("beta", raw.beta.is_some()),
                ("kappa", raw.kappa.is_some()),
                ("dim", raw.dim.is_some()),
            ] {
                if set {
                    check.fail(
                        &format!("target.{name}"),
                        "does not apply to gaussian targets",
                    );
                }
            }
            let precision = raw.precision.unwrap_or_else(|| vec![1.0]);
            match GaussianTarget::new(precision.clone()) {
                Ok(_) => Some(TargetSpec::Gaussian { precision }),
                Err(e) => {
                    check.fail("target.precision", e);
                    None
                }
            }
        }
        "expfam" => {
            if raw.precision.is_some() {
                check.fail("target.precision", "does not apply to expfam targets");
            }
            let alpha = raw.alpha.unwrap_or(1.0);
            let kappa = raw.kappa.unwrap_or(1.0);
            let dim = raw.dim.unwrap_or(1);
            let Some(beta) = raw.beta else {
                check.fail("target.beta", "required for expfam targets");
                return None;
            };
            match ExpFamilyTarget::new(alpha, beta, kappa, dim) {
                Ok(_) => Some(TargetSpec::ExpFamily { alpha, beta, kappa, dim }),
                Err(e) => {
                    check.fail("target", e);
                    None
                }
            }
        }
        other => {
            check.fail(
                "target.kind",
                format!("unknown target kind {other:?}; expected gaussian or expfam"),
            );
            None
        }
    }
}

fn validate_step_law(raw: Option<RawStepLaw>, check: &mut Check) -> Option<StepCountDistribution> {
    let raw = match raw {
        None => return Some(StepCountDistribution::Uniform { max: DEFAULT_MAX_STEPS }),
        Some(raw) => raw,
    };
    let law = raw.law.unwrap_or_else(|| "uniform".to_string());
    let reject_field = |check: &mut Check, name: &str, set: bool, law: &str| {
        if set {
            check.fail(
                &format!("kernel.steps.{name}"),
                format!("does not apply to the {law} law"),
            );
        }
    };
    match law.as_str() {
        "fixed" => {
            reject_field(check, "max", raw.max.is_some(), "fixed");
            reject_field(check, "p", raw.p.is_some(), "fixed");
            let value = raw.value.unwrap_or(1);
            if value == 0 {
                check.fail("kernel.steps.value", "must be at least 1");
                return None;
            }
            Some(StepCountDistribution::Fixed(value))
        }
        "uniform" => {
            reject_field(check, "value", raw.value.is_some(), "uniform");
            reject_field(check, "p", raw.p.is_some(), "uniform");
            let max = raw.max.unwrap_or(DEFAULT_MAX_STEPS);
            if max == 0 {
                check.fail("kernel.steps.max", "must be at least 1");
                return None;
            }
            Some(StepCountDistribution::Uniform { max })
        }
        "geometric" => {
            check.fail(
                "kernel.steps.law",
                "the geometric law has unbounded support and breaks the bounded \
                 step-count requirement; use fixed or uniform",
            );
            None
        }
        other => {
            check.fail(
                "kernel.steps.law",
                format!("unknown step law {other:?}; expected fixed or uniform"),
            );
            None
        }
    }
}

fn validate_probe(
    index: usize,
    raw: RawProbe,
    dim: Option<usize>,
    check: &mut Check,
) -> Option<ProbeSpec> {
    let field = |name: &str| format!("probes[{index}].{name}");
    let kind = match raw.kind {
        Some(kind) => kind,
        None => {
            check.fail(&field("kind"), "required");
            return None;
        }
    };
    let x0 = match raw.x0 {
        Some(x0) => {
            if !check.finite_vec(&field("x0"), &x0) {
                return None;
            }
            if let Some(d) = dim {
                if x0.len() != d {
                    check.fail(
                        &field("x0"),
                        format!("length {} does not match target dimension {d}", x0.len()),
                    );
                    return None;
                }
            }
            x0
        }
        None => {
            check.fail(&field("x0"), "required");
            return None;
        }
    };
    let n = raw.n.unwrap_or(DEFAULT_PROBE_DRAWS);
    if n < MIN_PROBE_DRAWS {
        check.fail(&field("n"), format!("needs at least {MIN_PROBE_DRAWS} draws"));
        return None;
    }
    let reject_field = |check: &mut Check, name: &str, set: bool, kind: &str| {
        if set {
            check.fail(
                &format!("probes[{index}].{name}"),
                format!("does not apply to the {kind} probe"),
            );
        }
    };
    match kind.as_str() {
        "drift_ratio" => {
            reject_field(check, "delta", raw.delta.is_some(), "drift_ratio");
            let s = raw.s.unwrap_or(0.1);
            if !check.finite_positive(&field("s"), s) {
                return None;
            }
            Some(ProbeSpec::DriftRatio { x0, s, n })
        }
        "rejection" => {
            reject_field(check, "s", raw.s.is_some(), "rejection");
            reject_field(check, "delta", raw.delta.is_some(), "rejection");
            Some(ProbeSpec::Rejection { x0, n })
        }
        "inward_rejection" => {
            reject_field(check, "s", raw.s.is_some(), "inward_rejection");
            reject_field(check, "delta", raw.delta.is_some(), "inward_rejection");
            Some(ProbeSpec::InwardRejection { x0, n })
        }
        "ball_mass" => {
            reject_field(check, "s", raw.s.is_some(), "ball_mass");
            let Some(delta) = raw.delta else {
                check.fail(&field("delta"), "required for ball_mass probes");
                return None;
            };
            if !check.finite_positive(&field("delta"), delta) {
                return None;
            }
            Some(ProbeSpec::BallMass { x0, delta, n })
        }
        other => {
            check.fail(
                &field("kind"),
                format!(
                    "unknown probe kind {other:?}; expected drift_ratio, rejection, \
                     inward_rejection, or ball_mass"
                ),
            );
            None
        }
    }
}

fn validate(
    raw: RawConfig,
    ov: &Overrides,
    config_sha256: String,
) -> Result<ExperimentConfig, ExperimentError> {
    let mut check = Check::new();

    let kind = match ov.kind {
        Some(kind) => kind,
        None => match raw.kind.as_deref() {
            None => ExperimentKind::Sample,
            Some(name) => match ExperimentKind::parse(name) {
                Some(kind) => kind,
                None => {
                    check.fail(
                        "kind",
                        format!(
                            "unknown experiment kind {name:?}; expected sample, diagnose, \
                             sweep, dynamic, or degenerate-demo"
                        ),
                    );
                    ExperimentKind::Sample
                }
            },
        },
    };

    let seed = raw.seed.unwrap_or(0);
    let chains = raw.chains.unwrap_or(1);
    if chains == 0 {
        check.fail("chains", "must be at least 1");
    }
    let output_dir = raw.output_dir.unwrap_or_else(|| PathBuf::from("out"));

    let target = validate_target(raw.target, &mut check);
    let dim = target.as_ref().map(|t| t.dim());

    let raw_kernel = raw.kernel.unwrap_or_default();
    let epsilon = raw_kernel.epsilon.unwrap_or(DEFAULT_EPSILON);
    check.finite_positive("kernel.epsilon", epsilon);
    let steps = validate_step_law(raw_kernel.steps, &mut check);
    let mass = raw_kernel.mass;
    if let Some(mass) = &mass {
        if mass.is_empty() || !mass.iter().all(|m| m.is_finite() && *m > 0.0) {
            check.fail("kernel.mass", "must be a non-empty list of finite positive values");
        } else if let Some(d) = dim {
            if mass.len() != d {
                check.fail(
                    "kernel.mass",
                    format!("length {} does not match target dimension {d}", mass.len()),
                );
            }
        }
    }

    let raw_sample = raw.sample.unwrap_or_default();
    let sample_steps = raw_sample.steps.unwrap_or(DEFAULT_CHAIN_STEPS);
    if sample_steps == 0 {
        check.fail("sample.steps", "must be at least 1");
    }
    let x0 = match raw_sample.x0 {
        Some(x0) => {
            check.finite_vec("sample.x0", &x0);
            if let Some(d) = dim {
                if x0.len() != d {
                    check.fail(
                        "sample.x0",
                        format!("length {} does not match target dimension {d}", x0.len()),
                    );
                }
            }
            x0
        }
        None => {
            let d = dim.unwrap_or(1);
            if kind == ExperimentKind::DegenerateDemo {
                vec![3.0; d]
            } else {
                vec![0.0; d]
            }
        }
    };

    let mut probes = Vec::new();
    for (i, raw_probe) in raw.probes.into_iter().enumerate() {
        if let Some(probe) = validate_probe(i, raw_probe, dim, &mut check) {
            probes.push(probe);
        }
    }
    if kind == ExperimentKind::Diagnose && probes.is_empty() && check.errors.is_empty() {
        check.fail("probes", "diagnose requires at least one probe");
    }

    let raw_sweep = raw.sweep.unwrap_or_default();
    let betas = raw_sweep
        .betas
        .unwrap_or_else(|| DEFAULT_SWEEP_BETAS.to_vec());
    if betas.is_empty() {
        check.fail("sweep.betas", "must list at least one value");
    }
    for (i, beta) in betas.iter().enumerate() {
        if !beta.is_finite() || *beta <= 0.0 {
            check.fail(
                &format!("sweep.betas[{i}]"),
                format!("must be finite and positive (got {beta})"),
            );
        }
    }
    let sweep_alpha = raw_sweep.alpha.unwrap_or(1.0);
    check.finite_positive("sweep.alpha", sweep_alpha);
    let sweep_kappa = raw_sweep.kappa.unwrap_or(1.0);
    if !sweep_kappa.is_finite() || sweep_kappa < 0.0 {
        check.fail("sweep.kappa", "must be finite and non-negative");
    }

    let raw_dynamic = raw.dynamic.unwrap_or_default();
    let dynamic_beta = raw_dynamic.beta.unwrap_or(2.0);
    check.finite_positive("dynamic.beta", dynamic_beta);
    let dynamic_x0 = raw_dynamic.x0.unwrap_or(2.0);
    if !dynamic_x0.is_finite() {
        check.fail("dynamic.x0", "must be finite");
    }
    let dynamic_n = raw_dynamic.n.unwrap_or(1_000);
    let probe = match raw_dynamic.probe.as_deref() {
        None => Some(DynamicProbe::Drift),
        Some(name) => match DynamicProbe::parse(name) {
            Some(probe) => Some(probe),
            None => {
                check.fail(
                    "dynamic.probe",
                    format!(
                        "unknown probe {name:?}; expected drift, virial, period, or exhaustion"
                    ),
                );
                None
            }
        },
    };
    if probe == Some(DynamicProbe::Drift) && dynamic_n < MIN_PROBE_DRAWS {
        check.fail(
            "dynamic.n",
            format!("needs at least {MIN_PROBE_DRAWS} draws"),
        );
    }
    if let Some(p) = probe {
        if p != DynamicProbe::Drift && dynamic_x0 == 0.0 {
            check.fail(
                "dynamic.x0",
                "must be nonzero for this probe; the orbit through (0, 0) is degenerate",
            );
        }
    }
    let energy_tol = raw_dynamic.energy_tol.unwrap_or(1e-10);
    check.finite_positive("dynamic.energy_tol", energy_tol);
    let max_substeps = raw_dynamic.max_substeps.unwrap_or(1 << 22);
    if max_substeps == 0 {
        check.fail("dynamic.max_substeps", "must be at least 1");
    }
    let dynamic_delta = raw_dynamic.delta.unwrap_or(1.0);
    check.finite_positive("dynamic.delta", dynamic_delta);

    if !check.errors.is_empty() {
        return Err(ExperimentError::Validation(check.errors));
    }

    Ok(ExperimentConfig {
        kind,
        seed,
        chains,
        output_dir,
        jobs: ov.jobs,
        target: target.expect("target validated"),
        kernel: KernelSpec {
            epsilon,
            steps: steps.expect("step law validated"),
            mass,
        },
        sample: SampleSpec {
            steps: sample_steps,
            x0,
        },
        probes,
        sweep: SweepSpec {
            betas,
            alpha: sweep_alpha,
            kappa: sweep_kappa,
        },
        dynamic: DynamicSpec {
            beta: dynamic_beta,
            x0: dynamic_x0,
            n: dynamic_n,
            probe: probe.expect("dynamic probe validated"),
            energy_tol,
            max_substeps,
            delta: dynamic_delta,
        },
        config_sha256,
    })
}

/// One row of a probe report. All rows in one file share a kind and an
/// input-column layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub kind: String,
    /// Echoed input columns as (name, already-formatted value) pairs.
    pub inputs: Vec<(String, String)>,
    pub estimate: f64,
    pub stderr: f64,
    pub n: u64,
    pub wall_time_s: f64,
}

/// Serializes a float with 17 significant digits, enough to round-trip.
pub fn fmt_f64(value: f64) -> String {
    format!("{value:.16e}")
}

fn fmt_vec(values: &[f64]) -> String {
    values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(";")
}

/// Writes rows as CSV with `# config_sha256=` and `# version=` header
/// lines. Rows must agree on kind and input columns; numeric fields
/// must be finite. An empty row list produces a header-only file with
/// the invariant columns.
pub fn emit_report(
    rows: &[ReportRow],
    path: &Path,
    config_sha256: &str,
) -> Result<(), ExperimentError> {
    for (i, row) in rows.iter().enumerate() {
        if row.kind != rows[0].kind {
            return Err(ExperimentError::Schema(format!(
                "row {i} has kind {:?} but the report started with {:?}; \
                 one report holds one probe kind",
                row.kind, rows[0].kind
            )));
        }
        let names = |r: &ReportRow| r.inputs.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
        if names(row) != names(&rows[0]) {
            return Err(ExperimentError::Schema(format!(
                "row {i} has input columns {:?} but the report started with {:?}",
                names(row),
                names(&rows[0])
            )));
        }
        if !row.estimate.is_finite() || !row.stderr.is_finite() || !row.wall_time_s.is_finite() {
            return Err(ExperimentError::Schema(format!(
                "row {i} has a non-finite numeric field"
            )));
        }
    }

    let mut file = fs::File::create(path).map_err(io_err(path))?;
    writeln!(file, "# config_sha256={config_sha256}").map_err(io_err(path))?;
    writeln!(file, "# version={}", env!("CARGO_PKG_VERSION")).map_err(io_err(path))?;
    let mut writer = csv::Writer::from_writer(file);

    let mut header = vec!["kind".to_string()];
    if let Some(first) = rows.first() {
        header.extend(first.inputs.iter().map(|(n, _)| n.clone()));
    }
    header.extend(["estimate", "stderr", "n", "wall_time_s"].map(String::from));
    writer
        .write_record(&header)
        .map_err(|e| ExperimentError::Internal(e.to_string()))?;
    for row in rows {
        let mut record = vec![row.kind.clone()];
        record.extend(row.inputs.iter().map(|(_, v)| v.clone()));
        record.push(fmt_f64(row.estimate));
        record.push(fmt_f64(row.stderr));
        record.push(row.n.to_string());
        record.push(fmt_f64(row.wall_time_s));
        writer
            .write_record(&record)
            .map_err(|e| ExperimentError::Internal(e.to_string()))?;
    }
    writer
        .flush()
        .map_err(|e| ExperimentError::Internal(e.to_string()))?;
    Ok(())
}

/// Files written by a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct SampleRecord<'a> {
    chain: u32,
    step: u64,
    x1: &'a [f64],
    accept_prob: f64,
    #[serde(rename = "L")]
    steps: u32,
    diverged: bool,
}

fn write_samples(
    path: &Path,
    chains: &[(u32, Vec<TransitionRecord>)],
) -> Result<(), ExperimentError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = std::io::BufWriter::new(file);
    for (chain, records) in chains {
        for (step, record) in records.iter().enumerate() {
            let line = SampleRecord {
                chain: *chain,
                step: step as u64,
                x1: &record.x1,
                accept_prob: record.accept_prob,
                steps: record.steps,
                diverged: record.diverged,
            };
            serde_json::to_writer(&mut out, &line)
                .map_err(|e| ExperimentError::Internal(e.to_string()))?;
            out.write_all(b"\n").map_err(io_err(path))?;
        }
    }
    out.flush().map_err(io_err(path))?;
    Ok(())
}

fn binomial_stderr(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Runs the configured experiment and writes its artifacts.
///
/// Chains and probes run concurrently, bounded by `jobs` when set;
/// results are aggregated in index order by a single writer, so output
/// bytes do not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts, ExperimentError> {
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.unwrap_or(0))
        .build()
        .map_err(|e| ExperimentError::Internal(e.to_string()))?;
    pool.install(|| match cfg.kind {
        ExperimentKind::Sample => run_sample(cfg),
        ExperimentKind::Diagnose => run_diagnose(cfg),
        ExperimentKind::Sweep => run_sweep(cfg),
        ExperimentKind::Dynamic => run_dynamic(cfg),
        ExperimentKind::DegenerateDemo => run_degenerate_demo(cfg),
    })
}

fn run_chain_records(
    cfg: &ExperimentConfig,
    kernel: &HmcKernelConfig,
    target: &dyn Target,
    chain: u32,
) -> (Vec<TransitionRecord>, f64) {
    let mut rng = chain_rng(cfg.seed, chain as u64);
    let start = Instant::now();
    let mut x = cfg.sample.x0.clone();
    let mut records = Vec::with_capacity(cfg.sample.steps as usize);
    for _ in 0..cfg.sample.steps {
        let record = hmc_step(kernel, target, &x, &mut rng);
        x.clone_from(&record.x1);
        records.push(record);
    }
    (records, start.elapsed().as_secs_f64())
}

fn chain_report_rows(chains: &[(u32, Vec<TransitionRecord>, f64)]) -> Vec<ReportRow> {
    chains
        .iter()
        .map(|(chain, records, wall)| {
            let n = records.len() as u64;
            let accepted = records.iter().filter(|r| r.accepted).count() as f64;
            let rate = accepted / records.len() as f64;
            ReportRow {
                kind: "chain_acceptance".to_string(),
                inputs: vec![("chain".to_string(), chain.to_string())],
                estimate: rate,
                stderr: binomial_stderr(rate, n),
                n,
                wall_time_s: *wall,
            }
        })
        .collect()
}

fn run_sample(cfg: &ExperimentConfig) -> Result<RunArtifacts, ExperimentError> {
    let target = cfg.target.build();
    let kernel = cfg.kernel.build();
    let chains: Vec<(u32, Vec<TransitionRecord>, f64)> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| {
            let (records, wall) = run_chain_records(cfg, &kernel, target.as_ref(), c);
            (c, records, wall)
        })
        .collect();

    let samples_path = cfg.output_dir.join("samples.jsonl");
    let trace: Vec<(u32, Vec<TransitionRecord>)> = chains
        .iter()
        .map(|(c, records, _)| (*c, records.clone()))
        .collect();
    write_samples(&samples_path, &trace)?;

    let report_path = cfg.output_dir.join("report.csv");
    emit_report(&chain_report_rows(&chains), &report_path, &cfg.config_sha256)?;
    Ok(RunArtifacts {
        files: vec![samples_path, report_path],
    })
}

fn probe_kind_name(probe: &ProbeSpec) -> &'static str {
    match probe {
        ProbeSpec::DriftRatio { .. } => "drift_ratio",
        ProbeSpec::Rejection { .. } => "rejection",
        ProbeSpec::InwardRejection { .. } => "inward_rejection",
        ProbeSpec::BallMass { .. } => "ball_mass",
    }
}

fn run_probe(cfg: &ExperimentConfig, index: usize, probe: &ProbeSpec) -> ReportRow {
    let target = cfg.target.build();
    let kernel = cfg.kernel.build();
    let mut rng = probe_rng(cfg.seed, index as u64);
    let start = Instant::now();
    let (inputs, estimate, stderr, n) = match probe {
        ProbeSpec::DriftRatio { x0, s, n } => {
            let est = drift_ratio(&kernel, target.as_ref(), x0, *s, *n, &mut rng);
            (
                vec![
                    ("x0".to_string(), fmt_vec(x0)),
                    ("s".to_string(), fmt_f64(*s)),
                ],
                est.ratio_mean,
                est.ratio_stderr,
                *n,
            )
        }
        ProbeSpec::Rejection { x0, n } => {
            let est = rejection_prob(&kernel, target.as_ref(), x0, *n, &mut rng);
            (
                vec![("x0".to_string(), fmt_vec(x0))],
                est.estimate,
                est.stderr,
                *n,
            )
        }
        ProbeSpec::InwardRejection { x0, n } => {
            let est = inward_rejection_mass(&kernel, target.as_ref(), x0, *n, &mut rng);
            (
                vec![("x0".to_string(), fmt_vec(x0))],
                est.estimate,
                est.stderr,
                *n,
            )
        }
        ProbeSpec::BallMass { x0, delta, n } => {
            let est = ball_mass(&kernel, target.as_ref(), x0, *delta, *n, &mut rng);
            (
                vec![
                    ("x0".to_string(), fmt_vec(x0)),
                    ("delta".to_string(), fmt_f64(*delta)),
                ],
                est.estimate,
                est.stderr,
                *n,
            )
        }
    };
    ReportRow {
        kind: probe_kind_name(probe).to_string(),
        inputs,
        estimate,
        stderr,
        n,
        wall_time_s: start.elapsed().as_secs_f64(),
    }
}

fn write_report_groups(
    rows: Vec<ReportRow>,
    cfg: &ExperimentConfig,
) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut kinds: Vec<String> = Vec::new();
    for row in &rows {
        if !kinds.contains(&row.kind) {
            kinds.push(row.kind.clone());
        }
    }
    let mut files = Vec::new();
    if kinds.len() <= 1 {
        let path = cfg.output_dir.join("report.csv");
        emit_report(&rows, &path, &cfg.config_sha256)?;
        files.push(path);
    } else {
        for kind in kinds {
            let group: Vec<ReportRow> =
                rows.iter().filter(|r| r.kind == kind).cloned().collect();
            let path = cfg.output_dir.join(format!("report.{kind}.csv"));
            emit_report(&group, &path, &cfg.config_sha256)?;
            files.push(path);
        }
    }
    Ok(files)
}

fn run_diagnose(cfg: &ExperimentConfig) -> Result<RunArtifacts, ExperimentError> {
    let rows: Vec<ReportRow> = cfg
        .probes
        .par_iter()
        .enumerate()
        .map(|(i, probe)| run_probe(cfg, i, probe))
        .collect();
    let files = write_report_groups(rows, cfg)?;
    Ok(RunArtifacts { files })
}

fn run_sweep(cfg: &ExperimentConfig) -> Result<RunArtifacts, ExperimentError> {
    let radii = probe_radii();
    let rows: Vec<ReportRow> = cfg
        .sweep
        .betas
        .par_iter()
        .map(|beta| {
            let start = Instant::now();
            let target = ExpFamilyTarget::new(cfg.sweep.alpha, *beta, cfg.sweep.kappa, 1)
                .expect("validated sweep target");
            let scan = sc_scan(&target, &[1.0], &radii);
            let class = tail_classify(*beta);
            let estimate = scan.last().map(|row| row.growth_ratio).unwrap_or(f64::NAN);
            ReportRow {
                kind: "tail_class".to_string(),
                inputs: vec![
                    ("beta".to_string(), fmt_f64(*beta)),
                    ("alpha".to_string(), fmt_f64(cfg.sweep.alpha)),
                    ("kappa".to_string(), fmt_f64(cfg.sweep.kappa)),
                    ("class".to_string(), class.label().to_string()),
                ],
                estimate,
                stderr: 0.0,
                n: scan.len() as u64,
                wall_time_s: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    let path = cfg.output_dir.join("report.csv");
    emit_report(&rows, &path, &cfg.config_sha256)?;
    Ok(RunArtifacts { files: vec![path] })
}

fn dynamic_error(e: Dynamic1dError) -> ExperimentError {
    match e {
        Dynamic1dError::Accuracy(msg) => ExperimentError::Accuracy(msg),
        other => ExperimentError::Validation(vec![format!("dynamic: {other}")]),
    }
}

fn run_dynamic(cfg: &ExperimentConfig) -> Result<RunArtifacts, ExperimentError> {
    let spec = &cfg.dynamic;
    let target = SmoothExpFamily1D::new(spec.beta)
        .map_err(|e| ExperimentError::Validation(vec![format!("dynamic.beta: {e}")]))?;
    let flow_cfg = spec.flow_config();
    let start = Instant::now();
    let base_inputs = vec![
        ("beta".to_string(), fmt_f64(spec.beta)),
        ("x0".to_string(), fmt_f64(spec.x0)),
    ];
    let rest = Phase1D { x: spec.x0, p: 0.0 };
    let row = match spec.probe {
        DynamicProbe::Drift => {
            let mut rng = probe_rng(cfg.seed, 0);
            let est = dynamic_drift_estimate(&target, spec.x0, spec.n, &mut rng, &flow_cfg)
                .map_err(dynamic_error)?;
            let mut inputs = base_inputs;
            inputs.push(("predicted".to_string(), fmt_f64(est.predicted)));
            ReportRow {
                kind: "dynamic_drift".to_string(),
                inputs,
                estimate: est.pv_estimate,
                stderr: est.stderr,
                n: est.n,
                wall_time_s: start.elapsed().as_secs_f64(),
            }
        }
        DynamicProbe::Virial => {
            let residual = virial_residual(&target, rest, &flow_cfg).map_err(dynamic_error)?;
            ReportRow {
                kind: "dynamic_virial".to_string(),
                inputs: base_inputs,
                estimate: residual,
                stderr: 0.0,
                n: 1,
                wall_time_s: start.elapsed().as_secs_f64(),
            }
        }
        DynamicProbe::Period => {
            let orbit = period(&target, rest).map_err(dynamic_error)?;
            let mut inputs = base_inputs;
            inputs.push(("x_plus".to_string(), fmt_f64(orbit.x_plus)));
            ReportRow {
                kind: "dynamic_period".to_string(),
                inputs,
                estimate: orbit.period,
                stderr: 0.0,
                n: 1,
                wall_time_s: start.elapsed().as_secs_f64(),
            }
        }
        DynamicProbe::Exhaustion => {
            let time =
                exhaustion_time(&target, rest, spec.delta, &flow_cfg).map_err(dynamic_error)?;
            let mut inputs = base_inputs;
            inputs.push(("delta".to_string(), fmt_f64(spec.delta)));
            ReportRow {
                kind: "dynamic_exhaustion".to_string(),
                inputs,
                estimate: time,
                stderr: 0.0,
                n: 1,
                wall_time_s: start.elapsed().as_secs_f64(),
            }
        }
    };
    let path = cfg.output_dir.join("report.csv");
    emit_report(&[row], &path, &cfg.config_sha256)?;
    Ok(RunArtifacts { files: vec![path] })
}

fn run_degenerate_demo(cfg: &ExperimentConfig) -> Result<RunArtifacts, ExperimentError> {
    let dim = cfg.sample.x0.len();
    let target = GaussianTarget::standard(dim);
    let kernel = HmcKernelConfig::new(2f64.sqrt(), StepCountDistribution::Fixed(2))
        .expect("demo kernel");
    let mut rng = chain_rng(cfg.seed, 0);
    let start = Instant::now();
    let x0 = cfg.sample.x0.clone();
    let mut x = x0.clone();
    let mut records = Vec::with_capacity(cfg.sample.steps as usize);
    // The largest distance from either of {x0, -x0} seen along the
    // trace; zero means the chain stayed on the two-point orbit.
    let mut residual = 0.0f64;
    for _ in 0..cfg.sample.steps {
        let record = hmc_step(&kernel, &target, &x, &mut rng);
        x.clone_from(&record.x1);
        let to_plus = x
            .iter()
            .zip(&x0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let to_minus = x
            .iter()
            .zip(&x0)
            .map(|(a, b)| (a + b).abs())
            .fold(0.0, f64::max);
        residual = residual.max(to_plus.min(to_minus));
        records.push(record);
    }
    let wall = start.elapsed().as_secs_f64();

    let samples_path = cfg.output_dir.join("samples.jsonl");
    write_samples(&samples_path, &[(0, records)])?;
    let report_path = cfg.output_dir.join("report.csv");
    let row = ReportRow {
        kind: "degenerate_demo".to_string(),
        inputs: vec![
            ("epsilon".to_string(), fmt_f64(2f64.sqrt())),
            ("x0".to_string(), fmt_vec(&x0)),
        ],
        estimate: residual,
        stderr: 0.0,
        n: cfg.sample.steps,
        wall_time_s: wall,
    };
    emit_report(&[row], &report_path, &cfg.config_sha256)?;
    Ok(RunArtifacts {
        files: vec![samples_path, report_path],
    })
}
