use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gtua::harness::config::{load, FitConfig, ReplayConfig, SweepConfig};
use gtua::harness::{cmd_fit_gmm, cmd_replay, cmd_sweep, exit_code, Check, EXIT_CHECK};
use gtua::scheme::PoolEstimate;
use gtua::Result;

#[derive(Parser)]
#[command(name = "gtua", version, about = "Group testing with untrusted advice: experiments and V2G replay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Evaluate the acceptance properties and exit with status 4 if any fails.
    #[arg(long)]
    check: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Mean tests of LA, GBS and GTUA over a grid of advice divergences.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        trials: Option<usize>,
        /// Comma-separated divergence targets in nats.
        #[arg(long, value_delimiter = ',')]
        epsilon_grid: Option<Vec<f64>>,
        #[arg(long)]
        p_file: Option<PathBuf>,
        #[arg(long, value_enum)]
        pool_estimate: Option<PoolEstimateArg>,
    },
    /// Fit a Gaussian mixture to charging profiles.
    FitGmm {
        #[command(flatten)]
        common: Common,
        /// Sessions CSV.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Train on the built-in three-component generator.
        #[arg(long)]
        synthetic: bool,
        #[arg(long)]
        k: Option<usize>,
        /// Choose K in 1..=k_max by BIC.
        #[arg(long)]
        bic_select: bool,
        #[arg(long)]
        k_max: Option<usize>,
    },
    /// Hourly detection replay over sampled charging sessions.
    Replay {
        #[command(flatten)]
        common: Common,
        /// Model JSON from fit-gmm.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Sessions CSV to fit inline when no model is given.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, value_enum)]
        pool_estimate: Option<PoolEstimateArg>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PoolEstimateArg {
    ResidualBudget,
    AdviceMass,
}

impl From<PoolEstimateArg> for PoolEstimate {
    fn from(a: PoolEstimateArg) -> Self {
        match a {
            PoolEstimateArg::ResidualBudget => PoolEstimate::ResidualBudget,
            PoolEstimateArg::AdviceMass => PoolEstimate::AdviceMass,
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn progress(line: &str) {
    let _ = writeln!(std::io::stdout(), "{line}");
}

fn run(cli: Cli) -> Result<(bool, Vec<Check>)> {
    match cli.command {
        Command::Sweep { common, n, d, eta, trials, epsilon_grid, p_file, pool_estimate } => {
            let mut c: SweepConfig = load(common.config.as_deref())?;
            set(&mut c.seed, common.seed);
            set(&mut c.n, n);
            set(&mut c.d, d);
            set(&mut c.trials, trials);
            c.eta = eta.or(c.eta);
            c.epsilon_grid = epsilon_grid.or(c.epsilon_grid);
            c.p_file = p_file.or(c.p_file);
            set(&mut c.pool_estimate, pool_estimate.map(Into::into));
            Ok((common.check, cmd_sweep(&c, &common.out_dir, progress)?))
        }
        Command::FitGmm { common, input, synthetic, k, bic_select, k_max } => {
            let mut c: FitConfig = load(common.config.as_deref())?;
            set(&mut c.seed, common.seed);
            c.input = input.or(c.input);
            c.synthetic |= synthetic;
            c.bic_select |= bic_select;
            set(&mut c.k, k);
            set(&mut c.k_max, k_max);
            Ok((common.check, cmd_fit_gmm(&c, &common.out_dir, progress)?))
        }
        Command::Replay { common, model, input, samples, eta, horizon, pool_estimate } => {
            let mut c: ReplayConfig = load(common.config.as_deref())?;
            set(&mut c.seed, common.seed);
            c.model = model.or(c.model);
            c.input = input.or(c.input);
            set(&mut c.samples, samples);
            c.eta = eta.or(c.eta);
            set(&mut c.horizon_hours, horizon);
            set(&mut c.pool_estimate, pool_estimate.map(Into::into));
            Ok((common.check, cmd_replay(&c, &common.out_dir, progress)?))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok((check, checks)) => {
            for c in &checks {
                progress(&c.line());
            }
            if check && checks.iter().any(|c| !c.passed) {
                ExitCode::from(EXIT_CHECK as u8)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
