mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use misslik::{Error, Result};
use serde_json::json;

use crate::commands::Context;
use crate::config::CheckKind;

#[derive(Parser, Debug)]
#[command(name = "misslik", version, about = "Gaussian missing-data estimation and simulation sweeps")]
struct Cli {
    /// TOML config layered over the bundled defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set sweep.loglik_sup.replicates=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Shortcut for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, short = 'o', default_value = ".", global = true)]
    output_dir: PathBuf,

    /// Worker threads (all cores when unset).
    #[arg(long, short = 'j', env = "MISSLIK_JOBS", global = true)]
    jobs: Option<usize>,

    /// -v for progress, -vv for debug output.
    #[arg(long, short = 'v', action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute moments of a CSV and draw a population from them.
    Ingest { csv: PathBuf },
    /// Delete entries of one column with the configured mechanism.
    Ampute { csv: PathBuf },
    /// EM maximum-likelihood fit with bootstrap standard deviations.
    Fit { csv: PathBuf },
    /// Bootstrap-EM multiple imputation.
    Impute { csv: PathBuf },
    /// Run the configured simulation sweep.
    Sweep,
    /// Exact and Monte Carlo checks of the partial-likelihood limits.
    Check {
        #[arg(long, value_enum)]
        kind: Option<CheckArg>,
    },
    /// Print the resolved configuration as TOML.
    Config,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum CheckArg {
    Lemma1,
    Theorem2,
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = config::load(cli.config.as_deref(), &overrides)?;
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::InvalidConfig("--jobs must be positive".into()));
        }
        // ignore failure: the global pool may already be initialised in tests
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let name = match &cli.command {
        Command::Ingest { .. } => "ingest",
        Command::Ampute { .. } => "ampute",
        Command::Fit { .. } => "fit",
        Command::Impute { .. } => "impute",
        Command::Sweep => "sweep",
        Command::Check { .. } => "check",
        Command::Config => {
            let text = toml::to_string_pretty(&cfg).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            print!("{text}");
            return Ok(());
        }
    };
    let mut ctx = Context::new(name, cfg, cli.output_dir.clone(), cli.jobs)?;
    let extra = match &cli.command {
        Command::Ingest { csv } => commands::ingest(&mut ctx, csv)?,
        Command::Ampute { csv } => commands::ampute(&mut ctx, csv)?,
        Command::Fit { csv } => commands::fit(&mut ctx, csv)?,
        Command::Impute { csv } => commands::impute(&mut ctx, csv)?,
        Command::Sweep => commands::sweep(&mut ctx)?,
        Command::Check { kind } => commands::check(
            &mut ctx,
            kind.map(|k| match k {
                CheckArg::Lemma1 => CheckKind::Lemma1,
                CheckArg::Theorem2 => CheckKind::Theorem2,
            }),
        )?,
        Command::Config => unreachable!(),
    };
    println!("{}", ctx.summary(extra));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("MISSLIK_LOG")
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = json!({ "error": { "code": e.code(), "message": e.to_string() } });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
