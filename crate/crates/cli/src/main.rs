//! Command-line driver: parses flags and environment overrides, loads
//! the configuration document, and hands a validated experiment to the
//! library. All substance lives in `hmc_ergo::cli`.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hmc_ergo::cli::{
    parse_config_with, run_experiment, ExperimentError, ExperimentKind, Overrides,
};

#[derive(Parser)]
#[command(
    name = "hmc-ergo",
    version,
    about = "Hamiltonian Monte Carlo chains and ergodicity probes"
)]
struct Cli {
    /// Configuration document (TOML). Omitting it uses the defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master random seed. Wins over HMC_ERGO_SEED and the document.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Maximum worker threads for chains and probes.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Output directory. Wins over HMC_ERGO_OUT and the document.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run sampling chains; writes samples.jsonl and report.csv.
    Sample(RunArgs),
    /// Run the configured probes; writes report files per probe kind.
    Diagnose(RunArgs),
    /// Classify tail exponents over a grid; writes report.csv.
    Sweep(RunArgs),
    /// Probe the variable-integration-time sampler on a 1-D target.
    Dynamic(RunArgs),
    /// Demonstrate the two-point orbit of the sqrt(2), two-step kernel.
    DegenerateDemo(RunArgs),
}

impl Command {
    fn kind(&self) -> ExperimentKind {
        match self {
            Command::Sample(_) => ExperimentKind::Sample,
            Command::Diagnose(_) => ExperimentKind::Diagnose,
            Command::Sweep(_) => ExperimentKind::Sweep,
            Command::Dynamic(_) => ExperimentKind::Dynamic,
            Command::DegenerateDemo(_) => ExperimentKind::DegenerateDemo,
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Sample(a)
            | Command::Diagnose(a)
            | Command::Sweep(a)
            | Command::Dynamic(a)
            | Command::DegenerateDemo(a) => a,
        }
    }
}

#[derive(Args, Default)]
struct RunArgs {
    /// Tail exponent override (smooth-family targets and sweeps).
    #[arg(long)]
    beta: Option<f64>,

    /// Leapfrog step size override.
    #[arg(long)]
    epsilon: Option<f64>,

    /// Chain length override.
    #[arg(long)]
    steps: Option<u64>,

    /// Start position override: comma-separated coordinates.
    #[arg(long, value_parser = parse_coords)]
    x0: Option<Coords>,

    /// Probe draw count override.
    #[arg(long)]
    n: Option<u64>,

    /// Probe kind override (dynamic: drift, virial, period, exhaustion).
    #[arg(long)]
    probe: Option<String>,
}

#[derive(Clone, Debug)]
struct Coords(Vec<f64>);

fn parse_coords(text: &str) -> Result<Coords, String> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| format!("invalid coordinate {part:?}"))
        })
        .collect::<Result<Vec<f64>, String>>()
        .map(Coords)
}

fn env_seed() -> Result<Option<u64>, ExperimentError> {
    match std::env::var("HMC_ERGO_SEED") {
        Ok(text) => text
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| {
                ExperimentError::Validation(vec![format!(
                    "HMC_ERGO_SEED: expected an unsigned integer, got {text:?}"
                )])
            }),
        Err(_) => Ok(None),
    }
}

fn run() -> Result<(), ExperimentError> {
    let cli = Cli::parse();
    let args = cli.command.args();
    let overrides = Overrides {
        kind: Some(cli.command.kind()),
        seed: cli.seed.or(env_seed()?),
        output_dir: cli
            .out
            .clone()
            .or_else(|| std::env::var_os("HMC_ERGO_OUT").map(PathBuf::from)),
        jobs: cli.jobs,
        beta: args.beta,
        epsilon: args.epsilon,
        steps: args.steps,
        x0: args.x0.clone().map(|c| c.0),
        n: args.n,
        probe: args.probe.clone(),
    };
    let text = match &cli.config {
        Some(path) => fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.clone(),
            source,
        })?,
        None => String::new(),
    };
    let cfg = parse_config_with(&text, &overrides)?;
    let artifacts = run_experiment(&cfg)?;
    for file in artifacts.files {
        println!("{}", file.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
