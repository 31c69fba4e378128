//! Command-line flags, the optional JSON config file, and their merge into a
//! [`RunConfig`].

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use mdep_core::simlab::{DgpId, Estimator};
use mdep_core::Family;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "mdep", version, about = "Minimum distance-covariance estimation, tests and simulations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Fit,
    Simulate,
    Coverage,
    TestRelevance,
    TestSpec,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Fit => "fit",
            CommandKind::Simulate => "simulate",
            CommandKind::Coverage => "coverage",
            CommandKind::TestRelevance => "test-relevance",
            CommandKind::TestSpec => "test-spec",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model on CSV data or on a simulated sample.
    Fit(Flags),
    /// Monte Carlo bias / MAD / RMSE of the estimators on a simulation design.
    Simulate(Flags),
    /// Coverage of asymptotic and bootstrap confidence intervals.
    Coverage(Flags),
    /// Partial distance-covariance instrument relevance tests.
    TestRelevance(Flags),
    /// Distance-covariance specification test of a fitted model.
    TestSpec(Flags),
}

impl Command {
    pub fn split(self) -> (CommandKind, Flags) {
        match self {
            Command::Fit(f) => (CommandKind::Fit, f),
            Command::Simulate(f) => (CommandKind::Simulate, f),
            Command::Coverage(f) => (CommandKind::Coverage, f),
            Command::TestRelevance(f) => (CommandKind::TestRelevance, f),
            Command::TestSpec(f) => (CommandKind::TestSpec, f),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON file of flat `flag: value` pairs; flags given on the command line win.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// CSV data file with a header row.
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    #[arg(long, value_name = "NAME")]
    pub outcome: Option<String>,
    /// Comma-separated covariate columns.
    #[arg(long, value_name = "A,B")]
    pub covariates: Option<String>,
    /// Comma-separated instrument columns (default: the covariates).
    #[arg(long, value_name = "C,D")]
    pub instruments: Option<String>,
    /// Comma-separated control columns for the relevance test
    /// (default: columns that are both covariates and instruments).
    #[arg(long, value_name = "E,F")]
    pub controls: Option<String>,
    /// linear | log-linear | fractional-logit | exp-index | implicit-exp
    #[arg(long)]
    pub family: Option<String>,
    /// Simulation design id, e.g. lin-i, nl-iii, cov-i.
    #[arg(long, value_name = "ID")]
    pub spec: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Bootstrap replicates.
    #[arg(long)]
    pub boot: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Nelder–Mead starts per fit.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Comma-separated estimators for `simulate` (mdep, ols, 2sls).
    #[arg(long)]
    pub estimators: Option<String>,
    /// csv | text
    #[arg(long)]
    pub format: Option<String>,
    /// Write the report here instead of standard output.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Write per-replication estimates as CSV (`simulate`, `coverage`).
    #[arg(long, value_name = "PATH")]
    pub per_rep: Option<PathBuf>,
    /// Worker threads (0: one per core). Does not affect results.
    #[arg(long)]
    pub workers: Option<usize>,
}

/// A list given either as `"a,b"` or `["a", "b"]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ListValue {
    Joined(String),
    Items(Vec<String>),
}

impl ListValue {
    fn joined(self) -> String {
        match self {
            ListValue::Joined(s) => s,
            ListValue::Items(v) => v.join(","),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    command: Option<String>,
    input: Option<PathBuf>,
    outcome: Option<String>,
    covariates: Option<ListValue>,
    instruments: Option<ListValue>,
    controls: Option<ListValue>,
    family: Option<String>,
    spec: Option<String>,
    n: Option<usize>,
    reps: Option<usize>,
    boot: Option<usize>,
    alpha: Option<f64>,
    seed: Option<u64>,
    restarts: Option<usize>,
    estimators: Option<ListValue>,
    format: Option<String>,
    out: Option<PathBuf>,
    per_rep: Option<PathBuf>,
    workers: Option<usize>,
}

fn load_file(path: &PathBuf, command: CommandKind) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config `{}`: {e}", path.display())))?;
    let file: FileConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid config `{}`: {e}", path.display())))?;
    if let Some(c) = &file.command {
        if c != command.name() {
            return Err(CliError::Usage(format!(
                "config `{}` is for `{c}`, not `{}`",
                path.display(),
                command.name()
            )));
        }
    }
    Ok(file)
}

impl Flags {
    /// Fills every unset flag from the config file, if one was given.
    pub fn merged(mut self, command: CommandKind) -> Result<Flags, CliError> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let f = load_file(&path, command)?;
        macro_rules! fill {
            ($($field:ident),*) => { $( if self.$field.is_none() { self.$field = f.$field; } )* };
        }
        fill!(input, outcome, family, spec, n, reps, boot, alpha, seed, restarts, format, out, per_rep, workers);
        macro_rules! fill_list {
            ($($field:ident),*) => { $( if self.$field.is_none() { self.$field = f.$field.map(ListValue::joined); } )* };
        }
        fill_list!(covariates, instruments, controls, estimators);
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Csv,
}

/// Where the data for `fit` and the test commands come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Csv {
        path: PathBuf,
        outcome: String,
        covariates: Vec<String>,
        instruments: Vec<String>,
        family: Family,
    },
    Simulated { dgp: DgpId, n: usize },
}

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: CommandKind,
    pub source: Option<Source>,
    pub controls: Option<Vec<String>>,
    pub estimators: Option<Vec<Estimator>>,
    pub reps: Option<usize>,
    pub boot: usize,
    pub alpha: f64,
    pub seed: u64,
    pub restarts: usize,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub per_rep: Option<PathBuf>,
    pub workers: usize,
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn require<T>(v: Option<T>, flag: &str, command: CommandKind) -> Result<T, CliError> {
    v.ok_or_else(|| usage(format!("`{}` requires --{flag}", command.name())))
}

impl RunConfig {
    pub fn resolve(command: CommandKind, flags: Flags) -> Result<RunConfig, CliError> {
        let flags = flags.merged(command)?;
        let simulation = matches!(command, CommandKind::Simulate | CommandKind::Coverage);

        let source = if simulation {
            if flags.input.is_some() {
                return Err(usage(format!("`{}` runs on a simulation design; --input is not accepted", command.name())));
            }
            let id = require(flags.spec.as_deref(), "spec", command)?;
            let dgp = DgpId::from_str(id).map_err(|e| usage(e.to_string()))?;
            Some(Source::Simulated {
                dgp,
                n: require(flags.n, "n", command)?,
            })
        } else {
            match (&flags.input, &flags.spec) {
                (Some(_), Some(_)) => return Err(usage("give either --input or --spec, not both")),
                (None, None) => return Err(usage(format!("`{}` requires --input or --spec", command.name()))),
                (Some(path), None) => {
                    let outcome = if command == CommandKind::TestRelevance {
                        flags.outcome.clone().unwrap_or_default()
                    } else {
                        require(flags.outcome.clone(), "outcome", command)?
                    };
                    let covariates = split_list(&require(flags.covariates.clone(), "covariates", command)?);
                    let instruments = flags
                        .instruments
                        .as_deref()
                        .map(split_list)
                        .unwrap_or_else(|| covariates.clone());
                    let family = match &flags.family {
                        Some(f) => Family::from_str(f).map_err(|e| usage(e.to_string()))?,
                        None => Family::Linear,
                    };
                    Some(Source::Csv {
                        path: path.clone(),
                        outcome,
                        covariates,
                        instruments,
                        family,
                    })
                }
                (None, Some(id)) => {
                    let dgp = DgpId::from_str(id).map_err(|e| usage(e.to_string()))?;
                    Some(Source::Simulated {
                        dgp,
                        n: require(flags.n, "n", command)?,
                    })
                }
            }
        };
        if matches!(source, Some(Source::Simulated { .. })) {
            for (set, flag) in [
                (flags.family.is_some(), "family"),
                (flags.outcome.is_some(), "outcome"),
                (flags.covariates.is_some(), "covariates"),
                (flags.instruments.is_some(), "instruments"),
            ] {
                if set {
                    return Err(usage(format!("--{flag} cannot be combined with --spec")));
                }
            }
        }

        let seed = if simulation {
            require(flags.seed, "seed", command)?
        } else {
            flags.seed.unwrap_or(0)
        };
        let reps = if simulation {
            Some(require(flags.reps, "reps", command)?)
        } else {
            if flags.reps.is_some() {
                return Err(usage(format!("--reps is not used by `{}`", command.name())));
            }
            None
        };
        if reps == Some(0) {
            return Err(usage("--reps must be at least 1"));
        }

        let boot = match command {
            CommandKind::Fit | CommandKind::Simulate => flags.boot.unwrap_or(0),
            CommandKind::Coverage => require(flags.boot, "boot", command)?,
            CommandKind::TestRelevance | CommandKind::TestSpec => flags.boot.unwrap_or(199),
        };
        if command == CommandKind::Simulate && boot != 0 {
            return Err(usage("--boot is not used by `simulate`"));
        }
        if matches!(command, CommandKind::TestRelevance | CommandKind::TestSpec)
            && boot < mdep_core::inference::MIN_TEST_REPLICATES
        {
            return Err(usage(format!(
                "bootstrap tests need --boot of at least {}, got {boot}",
                mdep_core::inference::MIN_TEST_REPLICATES
            )));
        }
        if (command == CommandKind::Coverage || command == CommandKind::Fit) && boot == 1 {
            return Err(usage("--boot must be 0 or at least 2"));
        }

        let alpha = flags.alpha.unwrap_or(mdep_core::inference::DEFAULT_ALPHA);
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(usage(format!("--alpha must lie in (0, 1), got {alpha}")));
        }
        let restarts = flags.restarts.unwrap_or(5);
        if restarts == 0 {
            return Err(usage("--restarts must be at least 1"));
        }

        let estimators = match &flags.estimators {
            None => None,
            Some(_) if command != CommandKind::Simulate => {
                return Err(usage(format!("--estimators is not used by `{}`", command.name())))
            }
            Some(list) => {
                let mut v = Vec::new();
                for name in split_list(list) {
                    let e = Estimator::from_str(&name).map_err(|e| usage(e.to_string()))?;
                    if v.contains(&e) {
                        return Err(usage(format!("estimator `{name}` listed twice")));
                    }
                    v.push(e);
                }
                if v.is_empty() {
                    return Err(usage("--estimators is empty"));
                }
                Some(v)
            }
        };
        if flags.controls.is_some() && command != CommandKind::TestRelevance {
            return Err(usage(format!("--controls is not used by `{}`", command.name())));
        }
        if flags.per_rep.is_some() && !simulation {
            return Err(usage(format!("--per-rep is not used by `{}`", command.name())));
        }

        let format = match flags.format.as_deref() {
            None | Some("text") => Format::Text,
            Some("csv") => Format::Csv,
            Some(other) => return Err(usage(format!("unknown format `{other}` (expected csv or text)"))),
        };

        Ok(RunConfig {
            command,
            source,
            controls: flags.controls.as_deref().map(split_list),
            estimators,
            reps,
            boot,
            alpha,
            seed,
            restarts,
            format,
            out: flags.out,
            per_rep: flags.per_rep,
            workers: flags.workers.unwrap_or(0),
        })
    }

    /// The invocation with every effective setting spelled out. Output
    /// locations, the worker count and the config path are left out: they do
    /// not change the results.
    pub fn command_line(&self) -> String {
        let mut s = format!("mdep {}", self.command.name());
        match &self.source {
            Some(Source::Csv {
                path,
                outcome,
                covariates,
                instruments,
                family,
            }) => {
                let _ = write!(s, " --input {}", path.display());
                if !outcome.is_empty() {
                    let _ = write!(s, " --outcome {outcome}");
                }
                let _ = write!(
                    s,
                    " --covariates {} --instruments {} --family {family}",
                    covariates.join(","),
                    instruments.join(",")
                );
            }
            Some(Source::Simulated { dgp, n }) => {
                let _ = write!(s, " --spec {dgp} --n {n}");
            }
            None => {}
        }
        if let Some(c) = &self.controls {
            let _ = write!(s, " --controls {}", c.join(","));
        }
        if let Some(reps) = self.reps {
            let _ = write!(s, " --reps {reps}");
        }
        if let Some(e) = &self.estimators {
            let names: Vec<&str> = e.iter().map(|e| e.name()).collect();
            let _ = write!(s, " --estimators {}", names.join(","));
        }
        if self.command != CommandKind::Simulate {
            let _ = write!(s, " --boot {}", self.boot);
        }
        if self.command != CommandKind::Simulate {
            let _ = write!(s, " --alpha {}", self.alpha);
        }
        let _ = write!(s, " --seed {}", self.seed);
        if self.command != CommandKind::TestRelevance {
            let _ = write!(s, " --restarts {}", self.restarts);
        }
        if self.format == Format::Csv {
            s.push_str(" --format csv");
        }
        s
    }
}
