//! `las-eval`: command-line evaluation of explanation simulatability.
//!
//! Every command is a pure function of its input files, configuration and seed.
//! Reports are built as [`output::Document`]s and rendered as JSON (canonical),
//! TSV or an aligned text table.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use las_core::leakage::{Calibration, LeakageError};
use las_core::objectives::ObjectiveError;
use las_core::stats::StatsError;
use las_core::synth::SynthError;
use las_core::textmetrics::BleuError;
use las_core::LasError;
use thiserror::Error;

use config::{CommandOverrides, CommonArgs, FileConfig, RunConfig, ScenarioKind, SynthOverrides};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_STATISTICAL: u8 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Statistical(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Validation(_) | CliError::Io(_) => EXIT_VALIDATION,
            CliError::Statistical(_) => EXIT_STATISTICAL,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Validation(_) => "validation",
            CliError::Io(_) => "io",
            CliError::Statistical(_) => "statistical",
        }
    }

    /// One line: `error: kind=<kind> code=<n> message="<escaped>"`.
    pub fn diagnostic(&self) -> String {
        format!(
            "error: kind={} code={} message={:?}",
            self.kind(),
            self.code(),
            self.to_string()
        )
    }

    /// Prefixes the message with `ctx: `.
    pub fn context(self, ctx: &str) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{ctx}: {m}")),
            CliError::Validation(m) => CliError::Validation(format!("{ctx}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{ctx}: {m}")),
            CliError::Statistical(m) => CliError::Statistical(format!("{ctx}: {m}")),
        }
    }
}

impl From<LeakageError> for CliError {
    fn from(e: LeakageError) -> Self {
        let msg = e.to_string();
        match e {
            LeakageError::Record(_)
            | LeakageError::MissingProbability(_)
            | LeakageError::ProbOutOfRange { .. } => CliError::Validation(msg),
            LeakageError::TooFewBins(_) => CliError::Usage(msg),
            LeakageError::BadFitInput { .. }
            | LeakageError::SingleClass(_)
            | LeakageError::NonFiniteScore(_) => CliError::Statistical(msg),
        }
    }
}

impl From<LasError> for CliError {
    fn from(e: LasError) -> Self {
        let msg = e.to_string();
        match e {
            LasError::Leakage(l) => l.into(),
            LasError::Record(_)
            | LasError::EmptyBatch
            | LasError::CoverageMismatch { .. }
            | LasError::IdMismatch { .. } => CliError::Validation(msg),
            LasError::EmptyGroup { .. } | LasError::BinOutOfRange { .. } => {
                CliError::Statistical(msg)
            }
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::BadLevel(_) => CliError::Usage(e.to_string()),
            _ => CliError::Statistical(e.to_string()),
        }
    }
}

impl From<BleuError> for CliError {
    fn from(e: BleuError) -> Self {
        match e {
            BleuError::LengthMismatch { .. } => CliError::Validation(e.to_string()),
            BleuError::EmptyCorpus => CliError::Statistical(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<ObjectiveError> for CliError {
    fn from(e: ObjectiveError) -> Self {
        CliError::Usage(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "las-eval", version, about = "Leakage-adjusted simulatability evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Check record files and list every invalid line.
    Validate,
    /// LAS with bootstrap interval per dataset and explanation source.
    Las,
    /// Binned LAS across a range of bin counts.
    Sweep {
        /// `platt` (fit on scores) or `none` (use stored probabilities).
        #[arg(long, value_parser = config::parse_calibration)]
        calibration: Option<Calibration>,
        /// Fit calibration on this record file instead of the evaluated batch.
        #[arg(long, value_name = "FILE")]
        platt_fit: Option<PathBuf>,
    },
    /// Agreement between model and human simulation labels.
    Agree,
    /// Human ratings against simulator correctness and example-level LAS.
    Regress,
    /// Corpus BLEU of line-aligned hypothesis and reference files.
    Bleu {
        #[arg(long, value_name = "FILE")]
        hyp: Option<PathBuf>,
        #[arg(long = "ref", value_name = "FILE")]
        reference: Option<PathBuf>,
    },
    /// Write a synthetic record batch with known LAS.
    Synth {
        #[arg(long, value_enum)]
        scenario: Option<ScenarioKind>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        p_leak: Option<f64>,
        #[arg(long)]
        p_base: Option<f64>,
        #[arg(long)]
        p_full_given_leak: Option<f64>,
        #[arg(long)]
        p_full_given_nonleak: Option<f64>,
        /// Spread of stored leakage probabilities around 0 or 1.
        #[arg(long)]
        leak_prob_noise: Option<f64>,
        #[arg(long)]
        effect_at_zero: Option<f64>,
        #[arg(long)]
        effect_at_one: Option<f64>,
        #[arg(long)]
        score_scale: Option<f64>,
    },
    /// LAS per training seed, with spread across seeds.
    Seeds,
    /// Print the named training hyperparameter presets.
    Presets,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Las => "las",
            Command::Sweep { .. } => "sweep",
            Command::Agree => "agree",
            Command::Regress => "regress",
            Command::Bleu { .. } => "bleu",
            Command::Synth { .. } => "synth",
            Command::Seeds => "seeds",
            Command::Presets => "presets",
        }
    }

    fn overrides(&self) -> CommandOverrides {
        match self.clone() {
            Command::Sweep {
                calibration,
                platt_fit,
            } => CommandOverrides {
                calibration,
                platt_fit,
                ..Default::default()
            },
            Command::Bleu { hyp, reference } => CommandOverrides {
                hyp,
                reference,
                ..Default::default()
            },
            Command::Synth {
                scenario,
                n,
                p_leak,
                p_base,
                p_full_given_leak,
                p_full_given_nonleak,
                leak_prob_noise,
                effect_at_zero,
                effect_at_one,
                score_scale,
            } => CommandOverrides {
                synth: SynthOverrides {
                    scenario,
                    n,
                    p_leak,
                    p_base,
                    p_full_given_leak,
                    p_full_given_nonleak,
                    leak_prob_noise,
                    effect_at_zero,
                    effect_at_one,
                    score_scale,
                },
                ..Default::default()
            },
            _ => CommandOverrides::default(),
        }
    }
}

/// Result of a command: the rendered body plus an optional failure that still
/// produced output (`validate` reports errors and fails).
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub body: String,
    pub notes: Vec<String>,
    pub failure: Option<CliError>,
}

pub fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let file = match &cli.common.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    RunConfig::resolve(&cli.common, cli.command.overrides(), file)
}

/// Runs a parsed invocation to a rendered report.
pub fn execute(cli: &Cli) -> Result<Rendered, CliError> {
    execute_with(&cli.command, &resolve(cli)?)
}

pub fn execute_with(command: &Command, cfg: &RunConfig) -> Result<Rendered, CliError> {
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?
            .install(|| commands::dispatch(command, cfg)),
        None => commands::dispatch(command, cfg),
    }
}

/// Parses `args` (including the program name) and executes.
pub fn run_args<I, T>(args: I) -> Result<Rendered, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    execute(&cli)
}

fn emit(rendered: &Rendered, output: Option<&PathBuf>) -> Result<(), CliError> {
    match output {
        Some(path) => std::fs::write(path, &rendered.body)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(rendered.body.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Io(format!("stdout: {e}")))
        }
    }
}

/// Process entry point used by the binary.
pub fn main_entry() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", CliError::Usage(first.trim_start_matches("error: ").into()).diagnostic());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let result = resolve(&cli).and_then(|cfg| {
        let rendered = execute_with(&cli.command, &cfg)?;
        Ok((cfg, rendered))
    });
    match result {
        Ok((cfg, rendered)) => {
            for note in &rendered.notes {
                eprintln!("{note}");
            }
            if let Err(e) = emit(&rendered, cfg.output.as_ref()) {
                eprintln!("{}", e.diagnostic());
                return ExitCode::from(e.code());
            }
            match &rendered.failure {
                Some(e) => {
                    eprintln!("{}", e.diagnostic());
                    ExitCode::from(e.code())
                }
                None => ExitCode::from(EXIT_OK),
            }
        }
        Err(e) => {
            eprintln!("{}", e.diagnostic());
            ExitCode::from(e.code())
        }
    }
}
