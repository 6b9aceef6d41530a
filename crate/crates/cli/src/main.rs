//! `trustguard`: ingest rating networks, train, evaluate, attack, ablate,
//! sweep and explain.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trustguard::ErrorKind;

use crate::config::CommonArgs;

#[derive(Debug, Parser)]
#[command(name = "trustguard", version, about = "Robust time-aware trust prediction")]
struct Cli {
    /// Worker threads (defaults to available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load an edge list, segment it and write the snapshot manifest.
    Ingest(CommonArgs),
    /// Train one model and write its checkpoint.
    Train(CommonArgs),
    /// Run a prediction task and write its metric table.
    Evaluate(CommonArgs),
    /// Run a task under attack, with the defense on and off.
    Attack(CommonArgs),
    /// Compare model variants on shared seeds and splits.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        /// Variants, comma-separated (default: all).
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<trustguard::model::Variant>>,
    },
    /// Sweep one hyperparameter.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        parameter: trustguard::eval::SweepParameter,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Export robust coefficients, attention trends and pair explanations.
    Explain {
        #[command(flatten)]
        common: CommonArgs,
        /// Trustor and trustee raw ids, `u,v`.
        #[arg(long, value_delimiter = ',', num_args = 1)]
        pair: Option<Vec<i64>>,
    },
    /// Print the edge homophily ratio under the Good/Bad node labeling.
    Homophily(CommonArgs),
    /// Write a generated rating network as an edge list.
    Synth {
        #[arg(long, default_value_t = 600)]
        nodes: usize,
        #[arg(long, default_value_t = 3000)]
        events: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        file: PathBuf,
    },
}

fn run(cli: Cli) -> trustguard::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| trustguard::Error::config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Train(a) => commands::train(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Attack(a) => commands::attack(&a),
        Command::Ablate { common, variants } => commands::ablate(&common, variants),
        Command::Sweep {
            common,
            parameter,
            values,
        } => commands::sweep(&common, parameter, &values),
        Command::Explain { common, pair } => commands::explain(&common, pair),
        Command::Homophily(a) => commands::homophily(&a),
        Command::Synth {
            nodes,
            events,
            seed,
            file,
        } => commands::synth(nodes, events, seed, &file),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
                ErrorKind::Other => 1,
            })
        }
    }
}
