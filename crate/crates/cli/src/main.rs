//! `xfire`: synthesize link-utilization traces around a flooding attack's
//! warm-up, train detectors on them, and score how early each one fires.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use xfire_cli::commands::detect::DetectArgs;
use xfire_cli::commands::eval::EvalArgs;
use xfire_cli::commands::gradcheck::GradcheckArgs;
use xfire_cli::commands::simulate::SimulateArgs;
use xfire_cli::commands::train::TrainArgs;
use xfire_cli::config::{DESK_INSTANCES, FULL_INSTANCES};
use xfire_cli::{commands, config};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Profile {
    /// 1000 instances: everything runs on one core in minutes.
    Desk,
    /// 6000 instances: the full experimental protocol.
    Full,
}

impl Profile {
    fn instances(self) -> usize {
        match self {
            Profile::Desk => DESK_INSTANCES,
            Profile::Full => FULL_INSTANCES,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "xfire",
    version,
    about = "Link-flooding warm-up synthesis and early detection"
)]
struct Cli {
    /// JSON run configuration; any subset of fields, flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed; every random choice in a run derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (simulate, train, eval).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Scale preset for the instance count.
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset of utilization traces plus its manifest.
    Simulate(SimulateArgs),
    /// Fit one detector family on a dataset's training split.
    Train(TrainArgs),
    /// Score checkpoints on a dataset split and write reports.
    Eval(EvalArgs),
    /// Stream per-sample detection decisions over CSV rows.
    Detect(DetectArgs),
    /// Finite-difference audit of every backward pass.
    Gradcheck(GradcheckArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<u8> {
    let mut config = config::load_config(cli.config.as_deref())?;
    if let Some(profile) = cli.profile {
        config.scenario.n_instances = profile.instances();
    }
    if let Some(seed) = cli.seed {
        config.scenario.master_seed = seed;
    }

    match cli.command {
        Command::Simulate(args) => commands::simulate::run(config, &require_out(&cli.out)?, &args),
        Command::Train(args) => commands::train::run(&config, &require_out(&cli.out)?, &args),
        Command::Eval(args) => commands::eval::run(&config, &require_out(&cli.out)?, &args),
        Command::Detect(args) => commands::detect::run(&config, &args),
        Command::Gradcheck(args) => commands::gradcheck::run(&config, &args),
    }
}

fn require_out(out: &Option<PathBuf>) -> anyhow::Result<PathBuf> {
    out.clone()
        .ok_or_else(|| anyhow::anyhow!("this command writes files; pass --out DIR"))
}
