use clap::{Args, Parser, Subcommand};
use flocknet_cli::commands;
use flocknet_cli::config::RunConfig;
use flocknet_cli::Result;
use flocknet_core::controllers::Arch;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "flocknet",
    version,
    about = "Train and evaluate decentralized flocking controllers by imitation of a centralized expert"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file; defaults cover the reference protocol.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed (dataset / training / experiment base).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an expert dataset and write it as an FLK1 file.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Output dataset path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_valid: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Train a controller on a dataset and write an FLKM checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Input FLK1 dataset.
        #[arg(long)]
        dataset: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-epoch training log here.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        arch: Option<Arch>,
        #[arg(long)]
        g: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Closed-loop evaluation of a checkpoint against the expert baseline.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Input FLKM checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Expected architecture; mismatch with the checkpoint is an error.
        #[arg(long)]
        arch: Option<Arch>,
        /// Team size to evaluate on (may differ from the training size).
        #[arg(long)]
        n_agents: Option<usize>,
        /// Number of freshly sampled test trajectories.
        #[arg(long, default_value_t = 20)]
        n_eval: usize,
        /// Optional per-trajectory CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hyperparameter sweep over (G, K) per architecture.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Desk scale: fewer trajectories, epochs and realizations.
        #[arg(long)]
        desk: bool,
    },
    /// Robustness to initial velocity and communication radius.
    Robustness {
        #[command(flatten)]
        common: Common,
        /// Output directory for the CSV and SVG files.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        desk: bool,
    },
    /// Transfer at scale: evaluate on larger teams without retraining.
    Transfer {
        #[command(flatten)]
        common: Common,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        desk: bool,
    },
    /// Verify analytic gradients against finite differences (exit 2 on
    /// failure).
    Gradcheck,
}

fn load_config(common: &Common) -> Result<(RunConfig, u64)> {
    let mut config = RunConfig::load_or_default(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.seed = seed;
        config.training.seed = seed;
    }
    let seed = config.seed;
    Ok((config, seed))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            common,
            out,
            n_train,
            n_valid,
            n_test,
        } => {
            let (mut config, seed) = load_config(&common)?;
            if let Some(n) = n_train {
                config.dataset.n_train = n;
            }
            if let Some(n) = n_valid {
                config.dataset.n_valid = n;
            }
            if let Some(n) = n_test {
                config.dataset.n_test = n;
            }
            commands::cmd_generate(&config, seed, &out)
        }
        Command::Train {
            common,
            dataset,
            out,
            log,
            arch,
            g,
            k,
            epochs,
        } => {
            let (mut config, _) = load_config(&common)?;
            if let Some(a) = arch {
                config.model.arch = a;
            }
            if let Some(g) = g {
                config.model.g = g;
            }
            if let Some(k) = k {
                config.model.k = k;
            }
            if let Some(e) = epochs {
                config.training.epochs = e;
            }
            commands::cmd_train(&config, &dataset, &out, log.as_deref())
        }
        Command::Eval {
            common,
            checkpoint,
            arch,
            n_agents,
            n_eval,
            out,
        } => {
            let (mut config, seed) = load_config(&common)?;
            if let Some(n) = n_agents {
                config.flocking.n_agents = n;
            }
            commands::cmd_eval(&config, &checkpoint, arch, seed, n_eval, out.as_deref())?;
            Ok(())
        }
        Command::Sweep { common, out, desk } => {
            let (config, seed) = load_config(&common)?;
            commands::cmd_sweep(&config, seed, desk, &out)
        }
        Command::Robustness { common, out, desk } => {
            let (config, seed) = load_config(&common)?;
            commands::cmd_robustness(&config, seed, desk, &out)
        }
        Command::Transfer { common, out, desk } => {
            let (config, seed) = load_config(&common)?;
            commands::cmd_transfer(&config, seed, desk, &out)
        }
        Command::Gradcheck => commands::cmd_gradcheck().map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
