use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use quail_cli::config::OUTPUT_DIR_ENV;
use quail_cli::{CorruptArgs, ExperimentConfig, UsageError};
use quail_core::corrupt::CorruptionMode;
use quail_core::data::Task;
use quail_core::search::ModelKind;

#[derive(Parser)]
#[command(name = "quail", version, about = "Quality-aware gated MLPs on corrupted tabular data")]
struct Cli {
    /// Worker threads for trial evaluation (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corrupt a CSV file and write the corrupted table, mask and quality scores.
    Corrupt {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        task: Task,
        #[arg(long)]
        mode: CorruptionMode,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run hyperparameter studies described by a TOML configuration.
    Study {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        splits: Option<usize>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<CorruptionMode>>,
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<ModelKind>>,
        #[arg(long, env = OUTPUT_DIR_ENV)]
        output_dir: Option<PathBuf>,
    },
    /// Rebuild result tables from existing ledgers.
    Report {
        #[arg(long, env = OUTPUT_DIR_ENV)]
        output_dir: PathBuf,
    },
    /// Finite-difference check of the composite loss gradient.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut workers = cli.workers;
    let command = cli.command;
    if let Command::Study { config, .. } = &command {
        let cfg = ExperimentConfig::load(config)?;
        workers = workers.or(cfg.workers);
    }
    if let Some(n) = workers {
        if n == 0 {
            return Err(UsageError("workers must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match command {
        Command::Corrupt {
            data,
            target,
            task,
            mode,
            seed,
            out,
        } => {
            let result = quail_cli::cmd_corrupt(&CorruptArgs {
                data,
                target,
                task,
                mode,
                seed,
                out_dir: out.clone(),
            })?;
            println!(
                "{} corrupted cells written to {}",
                result.mask.total_corrupted(),
                out.display()
            );
        }
        Command::Study {
            config,
            seed,
            trials,
            splits,
            max_epochs,
            modes,
            models,
            output_dir,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.apply_env();
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = trials {
                cfg.study.trials = t;
            }
            if let Some(s) = splits {
                cfg.study.splits = s;
            }
            if let Some(e) = max_epochs {
                cfg.study.max_epochs = e;
            }
            if let Some(m) = modes {
                cfg.modes = m;
            }
            if let Some(m) = models {
                cfg.models = m;
            }
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            let report = quail_cli::cmd_study(&cfg)?;
            print!("{}", quail_cli::render_report(&report)?);
        }
        Command::Report { output_dir } => {
            let report = quail_cli::cmd_report(&output_dir)?;
            print!("{}", quail_cli::render_report(&report)?);
        }
        Command::Gradcheck { cases, seed } => {
            let (reports, worst) = quail_cli::cmd_gradcheck(cases, seed)?;
            let failed = reports.iter().filter(|r| !r.passed()).count();
            println!("{} cases, {failed} failed, max relative error {worst:.3e}", reports.len());
            if failed > 0 {
                anyhow::bail!("{failed} gradient check cases exceeded the tolerance");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(quail_cli::exit_code(&e) as u8)
        }
    }
}
