//! `sparsehash` command-line tool.
//!
//! Every command writes its outputs under `<out>/<hash>/`, where the hash
//! covers the resolved configuration and the bytes of every input file, and
//! prints `run_dir<TAB><path>` as its last line.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "sparsehash", version, about = "Sparse similarity-preserving hashing")]
struct Cli {
    /// Root directory for run outputs.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum StrategyArg {
    Auto,
    Probe,
    Scan,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AlphabetArg {
    Ternary,
    Binary,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AveragingArg {
    Micro,
    Macro,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Gaussian-cluster dataset.
    Synth {
        #[arg(long, default_value_t = 10)]
        clusters: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 2000)]
        points: usize,
        #[arg(long, default_value_t = 1.0)]
        center_scale: f64,
        #[arg(long, default_value_t = 0.5)]
        spread: f64,
        #[arg(long, default_value_t = 0)]
        intrinsic_dim: usize,
        #[arg(long, default_value_t = 0.0)]
        intrinsic_scale: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train a hash function from a TOML run config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Encode a feature file with a checkpoint.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
    },
    /// Build a retrieval index from a code file.
    Index {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long, value_enum, default_value_t = AlphabetArg::Ternary)]
        alphabet: AlphabetArg,
    },
    /// Radius queries against an index.
    Query {
        #[arg(long)]
        index: PathBuf,
        /// Code file holding the queries.
        #[arg(long)]
        codes: PathBuf,
        #[arg(long, default_value_t = 0)]
        r: u32,
        #[arg(long, value_enum, default_value_t = StrategyArg::Auto)]
        strategy: StrategyArg,
        /// Scan-versus-probe cost ratio used by `auto`.
        #[arg(long)]
        kappa: Option<f64>,
    },
    /// Score queries against an index with a ground truth.
    Eval {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, requires = "database_labels")]
        query_labels: Option<PathBuf>,
        #[arg(long, requires = "query_labels")]
        database_labels: Option<PathBuf>,
        /// `query item` lines listing every relevant pair.
        #[arg(long, conflicts_with = "query_labels")]
        relevant: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        radii: Vec<u32>,
        #[arg(long, default_value_t = 100)]
        map_cutoff: usize,
        #[arg(long, default_value_t = 10)]
        mp_cutoff: usize,
        #[arg(long, value_enum, default_value_t = AveragingArg::Micro)]
        averaging: AveragingArg,
        /// Largest radius of the precision/recall curve.
        #[arg(long, default_value_t = 4)]
        pr_cap: u32,
    },
    /// Time probe and scan retrieval on random codes.
    Bench {
        #[arg(long, default_value_t = 50_000)]
        n: usize,
        #[arg(long, default_value_t = 48)]
        m: usize,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        radii: Vec<u32>,
        #[arg(long, default_value_t = 30)]
        queries: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip calibration and use this cost ratio for planning.
        #[arg(long)]
        kappa: Option<f64>,
    },
    /// Sparse versus dense comparison on synthetic data.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let out = &cli.out;
    match cli.command {
        Command::Synth {
            clusters,
            dim,
            points,
            center_scale,
            spread,
            intrinsic_dim,
            intrinsic_scale,
            seed,
        } => commands::synth(
            out,
            &sparsehash::data::SynthConfig {
                clusters,
                dim,
                points,
                center_scale,
                spread,
                intrinsic_dim,
                intrinsic_scale,
                seed,
            },
        ),
        Command::Train { config } => commands::train(out, &config),
        Command::Encode {
            checkpoint,
            features,
            threshold,
        } => commands::encode(out, &checkpoint, &features, threshold),
        Command::Index { codes, alphabet } => commands::index(out, &codes, alphabet),
        Command::Query {
            index,
            codes,
            r,
            strategy,
            kappa,
        } => commands::query(out, &index, &codes, r, strategy, kappa),
        Command::Eval {
            index,
            queries,
            query_labels,
            database_labels,
            relevant,
            radii,
            map_cutoff,
            mp_cutoff,
            averaging,
            pr_cap,
        } => {
            let truth = match (query_labels, database_labels, relevant) {
                (Some(q), Some(d), None) => commands::Truth::Labels(q, d),
                (None, None, Some(p)) => commands::Truth::Relevant(p),
                _ => {
                    return Err(CliError::Usage(
                        "give either --query-labels with --database-labels, or --relevant".into(),
                    ))
                }
            };
            commands::eval(
                out,
                &commands::EvalArgs {
                    index,
                    queries,
                    truth,
                    radii,
                    map_cutoff,
                    mp_cutoff,
                    averaging,
                    pr_cap,
                },
            )
        }
        Command::Bench {
            n,
            m,
            radii,
            queries,
            seed,
            kappa,
        } => commands::bench(out, n, m, &radii, queries, seed, kappa),
        Command::Experiment { config } => commands::experiment(out, config.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sparsehash: {e}");
            e.exit_code()
        }
    }
}
