//! `mtembed`: train, evaluate, mine, synthesize, gradient-check, reformat.
//!
//! Exit codes: 0 ok, 2 config, 3 data, 4 non-finite loss or gradient,
//! 5 evaluation dim beyond the checkpoint, 6 runtime (service, check failure).

mod commands;
mod config;
mod exit;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::exit::CliError;

#[derive(Debug, Parser)]
#[command(name = "mtembed", version, about = "Multi-task contrastive training for small text encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config, or a previous run's manifest.json.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an encoder; writes checkpoint.pic2, loss.csv and manifest.json.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training JSONL files (replace the config's list).
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Evaluate a checkpoint at one or more prefix dims.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Evaluation JSONL files or directories.
        suites: Vec<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill retrieval examples with negatives mined from a rank window.
    Mine {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one phase of the synthetic-data pipeline. The credential is read
    /// from SYNTH_API_KEY.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        phase: Option<u8>,
        /// Phase-2 task list.
        #[arg(long)]
        tasks: Option<PathBuf>,
        /// Replay responses from a fixture file instead of calling the endpoint.
        #[arg(long)]
        mock: Option<PathBuf>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic loss gradients with central finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Turn (text, label) JSONL into label triplets.
    Reformat {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        texts: Option<PathBuf>,
        #[arg(long)]
        task: Option<mtembed::Task>,
        /// Comma-separated label set.
        #[arg(long, value_delimiter = ',')]
        labels: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the seeded toy bundle.
    GenToy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Loss-variant ablation on the toy suite.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    RunConfig::load(common.config.as_deref())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            common,
            data,
            out,
            steps,
            lr,
        } => {
            let mut cfg = load(&common)?;
            if !data.is_empty() {
                cfg.inputs.train_data = data;
            }
            set(&mut cfg.train.seed, common.seed);
            set(&mut cfg.train.steps, steps);
            set(&mut cfg.train.lr, lr);
            commands::train(&cfg, &out)
        }
        Command::Eval {
            common,
            suites,
            checkpoint,
            dims,
            out,
        } => {
            let mut cfg = load(&common)?;
            if !suites.is_empty() {
                cfg.inputs.eval_suites = suites;
            }
            if checkpoint.is_some() {
                cfg.inputs.checkpoint = checkpoint;
            }
            set(&mut cfg.inputs.dims, dims);
            commands::eval(&cfg, &out)
        }
        Command::Mine {
            common,
            checkpoint,
            corpus,
            queries,
            out,
        } => {
            let mut cfg = load(&common)?;
            for (slot, v) in [
                (&mut cfg.inputs.checkpoint, checkpoint),
                (&mut cfg.inputs.corpus, corpus),
                (&mut cfg.inputs.queries, queries),
            ] {
                if v.is_some() {
                    *slot = v;
                }
            }
            set(&mut cfg.mining.seed, common.seed);
            commands::mine(&cfg, &out)
        }
        Command::Synth {
            common,
            phase,
            tasks,
            mock,
            endpoint,
            out,
        } => {
            let mut cfg = load(&common)?;
            set(&mut cfg.inputs.synth_phase, phase);
            if tasks.is_some() {
                cfg.inputs.tasks = tasks;
            }
            if mock.is_some() {
                cfg.inputs.mock = mock;
            }
            set(&mut cfg.synth.endpoint, endpoint);
            set(&mut cfg.synth.seed, common.seed);
            commands::synth(&cfg, &out)
        }
        Command::Gradcheck { common } => {
            let mut cfg = load(&common)?;
            set(&mut cfg.inputs.gradcheck_seed, common.seed);
            commands::gradcheck(&cfg)
        }
        Command::Reformat {
            common,
            texts,
            task,
            labels,
            out,
        } => {
            let mut cfg = load(&common)?;
            if texts.is_some() {
                cfg.inputs.texts = texts;
            }
            set(&mut cfg.inputs.reformat_task, task);
            set(&mut cfg.inputs.labels, labels);
            commands::reformat(&cfg, &out)
        }
        Command::GenToy { common, out } => {
            let mut cfg = load(&common)?;
            set(&mut cfg.inputs.toy_seed, common.seed);
            commands::gen_toy(&cfg, &out)
        }
        Command::Ablate {
            common,
            bundle,
            steps,
            lr,
            out,
        } => {
            let mut cfg = load(&common)?;
            if bundle.is_some() {
                cfg.inputs.bundle = bundle;
            }
            if let Some(s) = common.seed {
                cfg.inputs.ablation_seeds = vec![s];
            }
            set(&mut cfg.train.steps, steps);
            set(&mut cfg.train.lr, lr);
            commands::ablate(&cfg, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
