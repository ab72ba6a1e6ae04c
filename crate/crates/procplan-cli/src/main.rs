use clap::{Parser, Subcommand};
use procplan_cli::config::{resolve, ConfigArgs};
use procplan_cli::{commands, CliError};
use std::path::PathBuf;
use std::process::ExitCode;

/// Desk-scale lab for goal-conditioned procedure planning: synthetic task
/// families with exact oracles, twin-transformer planner training,
/// discrepancy-constrained beam search, metrics and baselines.
#[derive(Parser)]
#[command(name = "procplan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and archive the resolved config.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train a planner; writes best/last checkpoints and the loss curve.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset file (default: <out_dir>/dataset.json).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Continue from a saved checkpoint, step counter included.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Proceed despite mismatched artifact lineage.
        #[arg(long)]
        force: bool,
    },
    /// Decode one held-out episode and print the step table.
    Plan {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Checkpoint file (default: <out_dir>/checkpoint.best.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Index into the held-out split.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Use beam search instead of greedy decoding.
        #[arg(long)]
        beam: bool,
        #[arg(long)]
        force: bool,
    },
    /// Evaluate greedy + beam decoding and the baselines; write reports.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Beam-width sweep, optionally with the architecture ablation study.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also train the fully-connected ablation and emit compounding
        /// error curves for both architectures.
        #[arg(long)]
        compounding: bool,
        /// Rollout length for the compounding study (default: longest
        /// held-out horizon).
        #[arg(long)]
        t_max: Option<usize>,
        #[arg(long)]
        force: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { config } => commands::generate(&resolve(&config)?),
        Command::Train { config, dataset, resume, force } => {
            commands::train_cmd(&resolve(&config)?, &dataset, &resume, force)
        }
        Command::Plan { config, dataset, checkpoint, index, beam, force } => {
            commands::plan_cmd(&resolve(&config)?, &dataset, &checkpoint, index, beam, force)
        }
        Command::Eval { config, dataset, checkpoint, force } => {
            commands::eval_cmd(&resolve(&config)?, &dataset, &checkpoint, force)
        }
        Command::Ablate { config, dataset, checkpoint, compounding, t_max, force } => {
            commands::ablate_cmd(&resolve(&config)?, &dataset, &checkpoint, compounding, t_max, force)
        }
    }
}

fn main() -> ExitCode {
    // Dying quietly on a closed pipe (e.g. `procplan eval | head`) beats a
    // broken-pipe panic from println!.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
