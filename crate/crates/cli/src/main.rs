mod config;
mod commands;
mod report;

use anyhow::Result;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

/// Pipeline driver for corrective view-synthesis augmentation
/// experiments: demonstration generation, augmentation, policy training,
/// closed-loop evaluation, and cross-method reports.
#[derive(Parser)]
#[command(name = "spartn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override config values, e.g. --set train.steps=200
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Collect scripted demonstrations (noise-injected when method=dart).
    GenDemos(ConfigArgs),
    /// Build the augmented dataset (field renders for spartn, warps for ha).
    Augment(ConfigArgs),
    /// Train the policy for the configured method and every seed.
    Train(ConfigArgs),
    /// Evaluate trained policies closed-loop.
    Eval(ConfigArgs),
    /// Aggregate evaluation reports into a comparison table.
    Report {
        #[command(flatten)]
        config: ConfigArgs,
        /// Methods to include (default: every method with eval results).
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenDemos(args) => {
            let cfg = config::load(&args.config, &args.set)?;
            commands::gen_demos(&cfg)
        }
        Command::Augment(args) => {
            let cfg = config::load(&args.config, &args.set)?;
            commands::augment(&cfg)
        }
        Command::Train(args) => {
            let cfg = config::load(&args.config, &args.set)?;
            commands::train(&cfg)
        }
        Command::Eval(args) => {
            let cfg = config::load(&args.config, &args.set)?;
            commands::eval(&cfg)
        }
        Command::Report { config, methods } => {
            let cfg = config::load(&config.config, &config.set)?;
            report::report(&cfg, &methods)
        }
    }
}
