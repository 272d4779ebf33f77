//! The `skmtl` command line: `synth`, `fit`, `eval` and `sweep`.
//!
//! Exit codes: 0 success (a fit that hit its iteration cap included), 1 usage
//! or configuration error, 2 data error, 3 internal error.

mod commands;
pub mod io;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::Error;

pub use commands::{EvalConfig, FitConfig};

#[derive(Debug, Parser)]
#[command(name = "skmtl", version, about = "Sparse kernel multi-task learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic benchmark instance.
    Synth(CommonArgs),
    /// Train a model on a CSV dataset.
    Fit(CommonArgs),
    /// Score a trained model on a test CSV and export its structure.
    Eval(CommonArgs),
    /// Run a sparsity sweep over synthetic instances.
    Sweep(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, value_name = "INT")]
    jobs: Option<usize>,
    /// skmtl, stl or fixed:PATH (fit only).
    #[arg(long, value_name = "MODE")]
    mode: Option<String>,
    /// One-vs-all classification with accuracy scoring (fit and eval).
    #[arg(long)]
    classification: bool,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Failure(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Failure(Error::Diverged { .. }) => 3,
            CliError::Failure(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Failure(e) => write!(f, "{e}"),
        }
    }
}

pub(crate) fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Fit mode as given on the command line or in a config file.
#[derive(Debug, Clone, PartialEq)]
pub enum ModeArg {
    Skmtl,
    Stl,
    Fixed(PathBuf),
}

impl ModeArg {
    /// Parses `skmtl`, `stl` or `fixed:PATH`; relative paths are taken from
    /// `base`.
    pub fn parse(s: &str, base: &Path) -> Result<Self, CliError> {
        match s {
            "skmtl" => Ok(ModeArg::Skmtl),
            "stl" => Ok(ModeArg::Stl),
            _ => match s.strip_prefix("fixed:") {
                Some(p) if !p.is_empty() => Ok(ModeArg::Fixed(base.join(p))),
                _ => Err(usage(format!("unknown mode {s:?}; expected skmtl, stl or fixed:PATH"))),
            },
        }
    }
}

struct Context {
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: PathBuf,
    mode: Option<ModeArg>,
    classification: bool,
}

impl Context {
    fn config_dir(&self) -> PathBuf {
        self.config
            .as_ref()
            .and_then(|p| p.parent())
            .map(Path::to_path_buf)
            .unwrap_or_default()
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let (name, args) = match cli.command {
        Command::Synth(a) => ("synth", a),
        Command::Fit(a) => ("fit", a),
        Command::Eval(a) => ("eval", a),
        Command::Sweep(a) => ("sweep", a),
    };
    if args.mode.is_some() && name != "fit" {
        return Err(usage("--mode only applies to fit"));
    }
    if args.classification && !matches!(name, "fit" | "eval") {
        return Err(usage("--classification only applies to fit and eval"));
    }
    if let Some(p) = &args.config {
        if !p.is_file() {
            return Err(usage(format!("config file {} not found", p.display())));
        }
    }
    let mode = args
        .mode
        .as_deref()
        .map(|m| ModeArg::parse(m, Path::new("")))
        .transpose()?;
    let ctx = Context {
        config: args.config,
        seed: args.seed,
        out: args.out,
        mode,
        classification: args.classification,
    };
    let pool = match args.jobs {
        Some(0) => return Err(usage("--jobs must be at least 1")),
        Some(j) => rayon::ThreadPoolBuilder::new().num_threads(j).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    }
    .map_err(|e| usage(format!("cannot start worker threads: {e}")))?;
    pool.install(|| match name {
        "synth" => commands::synth(&ctx),
        "fit" => commands::fit(&ctx),
        "eval" => commands::eval(&ctx),
        _ => commands::sweep(&ctx),
    })
}
