//! `sdi` command-line pipeline: synth, train, annotate, features, cluster,
//! analyze and plot.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;
mod config;
mod io;
mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{AnalyzeArgs, AnnotateArgs, ClusterArgs, FeaturesArgs, PlotArgs, SynthArgs, TrainArgs};

#[derive(Debug, Parser)]
#[command(name = "sdi", version, about = "Sleep depth index pipeline")]
pub struct Cli {
    /// TOML file with one table per subcommand; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort: EDF + annotation sidecars + subject table.
    Synth(SynthArgs),
    /// Train the encoder on a directory of recordings.
    Train(TrainArgs),
    /// Write per-epoch depth and REM probability for one recording or a directory.
    Annotate(AnnotateArgs),
    /// Compute per-night biomarkers from annotated nights.
    Features(FeaturesArgs),
    /// Fit the two-component mixture and assign subtypes.
    Cluster(ClusterArgs),
    /// Evaluate concordance, REM AUROC, arousal relation and group statistics.
    Analyze(AnalyzeArgs),
    /// Render whole-night plots as SVG.
    Plot(PlotArgs),
}

/// A problem with how the tool was invoked rather than with the data.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Maps an error chain to the documented exit codes.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<sdi_core::Error>() {
            return if e.is_numeric() { 3 } else { 2 };
        }
    }
    2
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let file = config::load(cli.config.as_deref())?;
    let force = cli.force;
    match cli.command {
        Command::Synth(a) => commands::synth(config::merge(a, &file, "synth")?, force),
        Command::Train(a) => commands::train(config::merge(a, &file, "train")?, force),
        Command::Annotate(a) => commands::annotate(config::merge(a, &file, "annotate")?, force),
        Command::Features(a) => commands::features(config::merge(a, &file, "features")?, force),
        Command::Cluster(a) => commands::cluster(config::merge(a, &file, "cluster")?, force),
        Command::Analyze(a) => commands::analyze(config::merge(a, &file, "analyze")?, force),
        Command::Plot(a) => commands::plot(config::merge(a, &file, "plot")?, force),
    }
}
