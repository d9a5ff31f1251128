use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qno_cli::commands::{self, RegimeInput};
use qno_cli::{CliResult, RunConfig};
use qno_core::evolve::EvolutionMode;

/// Kerr oscillator in an Ohmic bath: runs, oracle comparisons, spectra,
/// decoherence sweeps and survival estimates.
///
/// Exit codes: 0 success, 2 invalid input, 3 integrator failure,
/// 4 tolerance exceeded.
#[derive(Parser)]
#[command(name = "qno", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Sweep seed (overrides `seed`).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Sweep worker threads (overrides `workers`).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// closed, born-markov-asymptotic, born-markov-transient or lindblad-rwa.
    #[arg(long, global = true, value_name = "NAME")]
    mode: Option<EvolutionMode>,
    /// Bound on max |d<a>| / |alpha| for `compare`.
    #[arg(long, global = true, value_name = "X")]
    tolerance: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Derived timescales and regime.
    Timescales,
    /// Evolve a coherent state; writes trajectory.csv and trajectory.json.
    Simulate,
    /// Compare a closed or lindblad-rwa run with its exact solution.
    Compare,
    /// Seeded random draws of tau_D, fitted against theory.
    Sweep,
    /// Fourier spectrum of x(tau) and its Gaussian width.
    Spectrum {
        /// Use the tau and x columns of an existing trajectory CSV.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
    /// Survival ratio Theta for an experimental system.
    Regimes {
        #[command(subcommand)]
        system: RegimeCommand,
    },
}

#[derive(Subcommand)]
enum RegimeCommand {
    /// Single-mode condensate.
    Bec {
        /// s-wave scattering length in m.
        #[arg(long, default_value_t = 5e-9)]
        scattering_length: f64,
        /// Atomic mass in kg.
        #[arg(long, default_value_t = 1.5e-25)]
        mass: f64,
        /// Trap angular frequency in rad/s.
        #[arg(long, default_value_t = 2.0 * PI * 100.0)]
        omega: f64,
        #[arg(long, default_value_t = 1e4)]
        particles: f64,
        /// Dimensionless relaxation time (trap frequency times lifetime).
        #[arg(long, default_value_t = 2.0 * PI * 100.0)]
        tau_gamma: f64,
    },
    /// Mechanical resonator with relaxation time 2Q.
    Cantilever {
        /// Classical nonlinearity.
        #[arg(long)]
        mu_cl: f64,
        #[arg(long, default_value_t = 1e6)]
        quality: f64,
        /// Mean number of levels in the coherent state.
        #[arg(long, default_value_t = 6e11)]
        levels: f64,
    },
}

fn load_config(c: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &c.out {
        cfg.out = out.clone();
    }
    if c.seed.is_some() {
        cfg.seed = c.seed;
    }
    if c.workers.is_some() {
        cfg.workers = c.workers;
    }
    if let Some(mode) = c.mode {
        cfg.mode = mode;
    }
    if c.tolerance.is_some() {
        cfg.tolerance = c.tolerance;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Command::Regimes { system } = &cli.command {
        let input = match *system {
            RegimeCommand::Bec {
                scattering_length,
                mass,
                omega,
                particles,
                tau_gamma,
            } => RegimeInput::Bec {
                scattering_length,
                mass,
                omega,
                particles,
                tau_gamma,
            },
            RegimeCommand::Cantilever { mu_cl, quality, levels } => RegimeInput::Cantilever { mu_cl, quality, levels },
        };
        return commands::regimes(&input, cli.common.out.as_ref());
    }
    let cfg = load_config(&cli.common)?;
    match &cli.command {
        Command::Timescales => commands::timescales(&cfg),
        Command::Simulate => commands::simulate(&cfg),
        Command::Compare => commands::compare(&cfg),
        Command::Sweep => commands::sweep(&cfg),
        Command::Spectrum { input } => commands::spectrum(&cfg, input.as_deref()),
        Command::Regimes { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
