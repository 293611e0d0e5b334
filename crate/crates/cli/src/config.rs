//! Run configuration: command-line flags layered over an optional flat TOML file.

use std::path::{Path, PathBuf};

use clap::Args;
use las_core::leakage::{Calibration, MAX_BINS, MIN_BINS};
use las_core::objectives::preset;
use las_core::stats::{BootstrapConfig, DEFAULT_BOOTSTRAP_ITERATIONS, DEFAULT_LEVEL};
use las_core::Scale;
use serde::Deserialize;

use crate::output::Format;
use crate::CliError;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "LAS_EVAL_CONFIG";

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Flat TOML file with defaults for any flag.
    #[arg(long, global = true, env = CONFIG_ENV, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Record file (JSON lines). Repeatable.
    #[arg(long = "input", short = 'i', global = true, value_name = "FILE")]
    pub inputs: Vec<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long, short = 'o', global = true, value_name = "FILE")]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[arg(long, global = true, value_name = "N")]
    pub bootstrap_iters: Option<usize>,
    /// Confidence level in (0,1).
    #[arg(long, global = true)]
    pub level: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Bin count `N` or inclusive range `MIN-MAX`.
    #[arg(long, global = true, value_name = "SPEC")]
    pub bins: Option<String>,
    /// `unit` or `pp` (percentage points).
    #[arg(long, global = true, value_parser = parse_scale)]
    pub scale: Option<Scale>,
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Fail on the first invalid record instead of skipping it.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

fn parse_scale(s: &str) -> Result<Scale, String> {
    match s {
        "unit" => Ok(Scale::Unit),
        "pp" => Ok(Scale::PercentagePoints),
        other => Err(format!("unknown scale `{other}` (expected unit or pp)")),
    }
}

pub fn parse_calibration(s: &str) -> Result<Calibration, String> {
    match s {
        "platt" => Ok(Calibration::Platt),
        "none" => Ok(Calibration::None),
        other => Err(format!("unknown calibration `{other}` (expected platt or none)")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// Two-group scenario with analytic LAS 0.3.
    Reference,
    /// Leakage probability uniform on [0,1] with a linear effect.
    Linear,
    /// Two-group scenario built entirely from the supplied parameters.
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinSpec {
    pub min: usize,
    pub max: usize,
}

impl BinSpec {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        let bad = || CliError::Usage(format!("--bins: expected N or MIN-MAX, got `{s}`"));
        let (min, max) = match s.split_once('-') {
            Some((a, b)) => (
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            ),
            None => {
                let n = s.trim().parse().map_err(|_| bad())?;
                (n, n)
            }
        };
        if min < MIN_BINS || max < min {
            return Err(CliError::Usage(format!(
                "--bins: need {MIN_BINS} <= MIN <= MAX, got `{s}`"
            )));
        }
        if max > MAX_BINS {
            log::warn!("bin counts above {MAX_BINS} leave most bins sparse");
        }
        Ok(Self { min, max })
    }

    pub fn range(&self) -> std::ops::RangeInclusive<usize> {
        self.min..=self.max
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(PathBuf),
    Many(Vec<PathBuf>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum BinsValue {
    Count(usize),
    Spec(String),
}

/// Keys accepted in the config file. Every flag has a twin here.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    input: Option<OneOrMany>,
    output: Option<PathBuf>,
    format: Option<Format>,
    bootstrap_iters: Option<usize>,
    level: Option<f64>,
    seed: Option<u64>,
    bins: Option<BinsValue>,
    scale: Option<Scale>,
    preset: Option<String>,
    strict: Option<bool>,
    threads: Option<usize>,
    calibration: Option<Calibration>,
    platt_fit: Option<PathBuf>,
    hyp: Option<PathBuf>,
    #[serde(rename = "ref")]
    reference: Option<PathBuf>,
    scenario: Option<ScenarioKind>,
    n: Option<usize>,
    p_leak: Option<f64>,
    p_base: Option<f64>,
    p_full_given_leak: Option<f64>,
    p_full_given_nonleak: Option<f64>,
    leak_prob_noise: Option<f64>,
    effect_at_zero: Option<f64>,
    effect_at_one: Option<f64>,
    score_scale: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let mut cfg: FileConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    /// Makes relative paths relative to the config file's directory.
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.input {
            Some(OneOrMany::One(p)) => fix(p),
            Some(OneOrMany::Many(ps)) => ps.iter_mut().for_each(fix),
            None => {}
        }
        for p in [
            &mut self.output,
            &mut self.platt_fit,
            &mut self.hyp,
            &mut self.reference,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }
}

/// Subcommand-specific flags that also have config twins.
#[derive(Debug, Clone, Default)]
pub struct CommandOverrides {
    pub calibration: Option<Calibration>,
    pub platt_fit: Option<PathBuf>,
    pub hyp: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub synth: SynthOverrides,
}

#[derive(Debug, Clone, Default)]
pub struct SynthOverrides {
    pub scenario: Option<ScenarioKind>,
    pub n: Option<usize>,
    pub p_leak: Option<f64>,
    pub p_base: Option<f64>,
    pub p_full_given_leak: Option<f64>,
    pub p_full_given_nonleak: Option<f64>,
    pub leak_prob_noise: Option<f64>,
    pub effect_at_zero: Option<f64>,
    pub effect_at_one: Option<f64>,
    pub score_scale: Option<f64>,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub inputs: Vec<PathBuf>,
    pub output: Option<PathBuf>,
    pub format: Format,
    pub bootstrap: BootstrapConfig,
    pub bins: Option<BinSpec>,
    pub scale: Scale,
    pub preset: Option<String>,
    pub strict: bool,
    pub threads: Option<usize>,
    pub calibration: Calibration,
    pub platt_fit: Option<PathBuf>,
    pub hyp: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub synth: SynthOverrides,
}

impl RunConfig {
    pub fn resolve(
        args: &CommonArgs,
        cmd: CommandOverrides,
        file: FileConfig,
    ) -> Result<Self, CliError> {
        let inputs = if args.inputs.is_empty() {
            match file.input {
                Some(OneOrMany::One(p)) => vec![p],
                Some(OneOrMany::Many(ps)) => ps,
                None => Vec::new(),
            }
        } else {
            args.inputs.clone()
        };
        let level = args.level.or(file.level).unwrap_or(DEFAULT_LEVEL);
        if !(level > 0.0 && level < 1.0) {
            return Err(CliError::Usage(format!("--level must be in (0,1), got {level}")));
        }
        let bins = match (&args.bins, file.bins) {
            (Some(s), _) => Some(BinSpec::parse(s)?),
            (None, Some(BinsValue::Count(n))) => Some(BinSpec::parse(&n.to_string())?),
            (None, Some(BinsValue::Spec(s))) => Some(BinSpec::parse(&s)?),
            (None, None) => None,
        };
        let preset_name = args.preset.clone().or(file.preset);
        if let Some(name) = &preset_name {
            preset(name).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        let threads = args.threads.or(file.threads);
        if threads == Some(0) {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        let s = cmd.synth;
        Ok(Self {
            inputs,
            output: args.output.clone().or(file.output),
            format: args.format.or(file.format).unwrap_or_default(),
            bootstrap: BootstrapConfig {
                iterations: args
                    .bootstrap_iters
                    .or(file.bootstrap_iters)
                    .unwrap_or(DEFAULT_BOOTSTRAP_ITERATIONS),
                level,
                seed: args.seed.or(file.seed).unwrap_or(0),
            },
            bins,
            scale: args.scale.or(file.scale).unwrap_or_default(),
            preset: preset_name,
            strict: args.strict || file.strict.unwrap_or(false),
            threads,
            calibration: cmd.calibration.or(file.calibration).unwrap_or_default(),
            platt_fit: cmd.platt_fit.or(file.platt_fit),
            hyp: cmd.hyp.or(file.hyp),
            reference: cmd.reference.or(file.reference),
            synth: SynthOverrides {
                scenario: s.scenario.or(file.scenario),
                n: s.n.or(file.n),
                p_leak: s.p_leak.or(file.p_leak),
                p_base: s.p_base.or(file.p_base),
                p_full_given_leak: s.p_full_given_leak.or(file.p_full_given_leak),
                p_full_given_nonleak: s.p_full_given_nonleak.or(file.p_full_given_nonleak),
                leak_prob_noise: s.leak_prob_noise.or(file.leak_prob_noise),
                effect_at_zero: s.effect_at_zero.or(file.effect_at_zero),
                effect_at_one: s.effect_at_one.or(file.effect_at_one),
                score_scale: s.score_scale.or(file.score_scale),
            },
        })
    }
}
