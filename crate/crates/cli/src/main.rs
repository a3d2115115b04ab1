use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use voltvar_cli::commands;
use voltvar_cli::config::SurrogateKind;
use voltvar_cli::{CliError, RunConfig};

/// Neural power-flow surrogates, volt-var optimization and droop-rule training
/// for radial distribution feeders.
///
/// Exit codes: 0 ok, 2 configuration, 3 data, 4 training, 5 control loop.
#[derive(Parser)]
#[command(name = "voltvar", version)]
struct Cli {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the power-flow and scenario datasets.
    GenData(GenDataArgs),
    /// Train the networks and fit the linear baselines.
    TrainPf(TrainPfArgs),
    /// Test-set prediction error of every power-flow model.
    EvalPf,
    /// Optimize reactive setpoints on the test scenarios.
    Vvo(VvoArgs),
    /// Train droop rules on the training scenarios.
    TrainVvc(TrainVvcArgs),
    /// Evaluate droop rules on the exact closed loop.
    EvalVvc,
    /// Collect the rendered tables into one summary.
    Report,
    /// Every stage in order.
    Run,
}

#[derive(Args)]
struct GenDataArgs {
    /// Power-flow samples.
    #[arg(long)]
    samples: Option<usize>,
    /// Operating scenarios.
    #[arg(long)]
    scenarios: Option<usize>,
}

#[derive(Args)]
struct TrainPfArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args)]
struct VvoArgs {
    /// Restrict to these surrogates (repeatable).
    #[arg(long, value_enum)]
    surrogate: Vec<SurrogateKind>,
    #[arg(long)]
    node_limit: Option<usize>,
    #[arg(long)]
    full_node_limit: Option<usize>,
    /// Wall-clock cap in seconds for the full-width network.
    #[arg(long)]
    full_time_limit: Option<u64>,
}

#[derive(Args)]
struct TrainVvcArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    set(&mut config.seed, cli.seed);
    set(&mut config.out, cli.out.clone());
    match &cli.command {
        Command::GenData(a) => {
            set(&mut config.data.pf_samples, a.samples);
            set(&mut config.data.scenario_samples, a.scenarios);
        }
        Command::TrainPf(a) => {
            set(&mut config.pf.epochs, a.epochs);
            set(&mut config.pf.hidden, a.hidden);
            set(&mut config.pf.batch_size, a.batch_size);
            set(&mut config.pf.learning_rate, a.learning_rate);
        }
        Command::Vvo(a) => {
            if !a.surrogate.is_empty() {
                config.vvo.surrogates = a.surrogate.clone();
            }
            set(&mut config.vvo.node_limit, a.node_limit);
            set(&mut config.vvo.full_node_limit, a.full_node_limit);
            set(&mut config.vvo.full_time_limit_secs, a.full_time_limit);
        }
        Command::TrainVvc(a) => {
            set(&mut config.vvc.epochs, a.epochs);
            set(&mut config.vvc.batch_size, a.batch_size);
            set(&mut config.vvc.learning_rate, a.learning_rate);
        }
        Command::EvalPf | Command::EvalVvc | Command::Report | Command::Run => {}
    }
    Ok(config)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let config = resolve(cli)?;
    match &cli.command {
        Command::GenData(_) => commands::gen_data(&config),
        Command::TrainPf(_) => commands::train_pf_cmd(&config),
        Command::EvalPf => commands::eval_pf(&config).map(|_| ()),
        Command::Vvo(_) => commands::vvo(&config).map(|_| ()),
        Command::TrainVvc(_) => commands::train_vvc_cmd(&config),
        Command::EvalVvc => commands::eval_vvc(&config).map(|_| ()),
        Command::Report => commands::report(&config).map(|s| print!("{s}")),
        Command::Run => commands::run_all(&config).map(|s| print!("{s}")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.stage.exit_code())
        }
    }
}
