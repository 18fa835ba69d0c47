//! `cpa-parallab`: simulate PE-array power traces, attack them with CPA and
//! reproduce the published curves.

mod commands;
mod config;
mod output;
mod reproduce;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use parallab::checks::Scale;
use parallab::cpa::DEFAULT_HYPOTHESIS_CAP;

use commands::{AttackArgs, AttackMode, Session};
use config::ExperimentConfig;
use reproduce::Figure;

#[derive(Parser)]
#[command(name = "cpa-parallab", version, about)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Runs per array size when the configuration does not set `n_runs`.
    #[arg(long, global = true, value_enum, default_value_t = ScaleArg::Desk)]
    scale: ScaleArg,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite existing output files.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads. Results do not depend on it.
    #[arg(long, global = true, env = "CPA_PARALLAB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a campaign and write it as a trace file with a JSON sidecar.
    Simulate {
        /// Array size; overrides the configuration.
        #[arg(long)]
        n_pe: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        traces: Option<usize>,
    },
    /// Attack one run of a trace file and list every hypothesis.
    Attack {
        /// Trace file written by `simulate` or `import`, or measured traces
        /// together with `--meta`.
        campaign: PathBuf,
        #[arg(long)]
        tau: usize,
        #[arg(long, default_value_t = 0)]
        run: usize,
        #[arg(long, value_enum, default_value_t = AttackMode::Prefix)]
        mode: AttackMode,
        /// Known earlier weights, comma separated (prefix mode).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        prefix: Option<Vec<i32>>,
        /// Metadata of measured traces.
        #[arg(long)]
        meta: Option<PathBuf>,
        /// Largest hypothesis space enumerated in full mode.
        #[arg(long, default_value_t = DEFAULT_HYPOTHESIS_CAP)]
        cap: u128,
    },
    /// SNR of the targeted PE per array size and step.
    Snr {
        /// Use a saved campaign instead of simulating the configured sweep.
        #[arg(long)]
        campaign: Option<PathBuf>,
    },
    /// Success curves and the array size where the attack stops working.
    Crossing {
        /// Curve CSVs to analyse instead of simulating.
        #[arg(long = "curve")]
        curves: Vec<PathBuf>,
    },
    /// Fit the exponential decay law to a CSV with columns `n_pe,rho`.
    Fit { csv: PathBuf },
    /// Regenerate a published figure and check it against reference values.
    Reproduce {
        #[arg(value_enum)]
        figure: Figure,
        /// Weight file for appendixC.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Convert measured traces plus metadata into a trace file.
    Import {
        traces: PathBuf,
        #[arg(long)]
        meta: PathBuf,
    },
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    let mut config = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out = out;
    }
    let scale = match cli.scale {
        ScaleArg::Desk => Scale::Desk,
        ScaleArg::Full => Scale::Full,
    };
    let mut session = Session {
        config,
        scale,
        force: cli.force,
    };
    match cli.command {
        Command::Simulate { n_pe, runs, traces } => {
            let c = &mut session.config;
            c.array.n_pe = n_pe.unwrap_or(c.array.n_pe);
            c.n_runs = runs.or(c.n_runs);
            c.n_traces = traces.unwrap_or(c.n_traces);
            commands::simulate(&session)?;
        }
        Command::Attack {
            campaign,
            tau,
            run,
            mode,
            prefix,
            meta,
            cap,
        } => commands::attack_cmd(
            &session,
            &AttackArgs {
                campaign,
                meta,
                tau,
                run,
                mode,
                prefix,
                cap,
            },
        )?,
        Command::Snr { campaign } => commands::snr_cmd(&session, campaign.as_deref())?,
        Command::Crossing { curves } => commands::crossing_cmd(&session, &curves)?,
        Command::Fit { csv } => commands::fit_cmd(&csv)?,
        Command::Reproduce { figure, weights } => return reproduce::reproduce(&session, figure, weights),
        Command::Import { traces, meta } => commands::import_cmd(&session, &traces, &meta)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
