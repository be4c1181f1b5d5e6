//! Command-line front end: argument parsing, configuration, output
//! staging and the manifest.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::{resolve, ConfigError, RunConfig};
use manifest::{FileDigest, Manifest};

pub const ENV_OUT: &str = "PLANTIV_OUT";
pub const ENV_JOBS: &str = "PLANTIV_JOBS";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Command {
    Simulate,
    BuildExposure,
    BuildPanel,
    Estimate,
    BalanceTest,
    Summarize,
    LivesSaved,
    ValidateConfig,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::BuildExposure => "build-exposure",
            Command::BuildPanel => "build-panel",
            Command::Estimate => "estimate",
            Command::BalanceTest => "balance-test",
            Command::Summarize => "summarize",
            Command::LivesSaved => "lives-saved",
            Command::ValidateConfig => "validate-config",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Output directory (overrides PLANTIV_OUT and the config).
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
    /// Subsample: all, east, northwest, southwest, ARCZ, SO2CZ or NPS.
    #[arg(long)]
    pub subsample: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (overrides PLANTIV_JOBS and the config).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum CliCommand {
    /// Generate a synthetic input set with planted effects.
    Simulate(CommonArgs),
    /// Build the candidate instrument matrix.
    BuildExposure(CommonArgs),
    /// Build the county-year analysis table.
    BuildPanel(CommonArgs),
    /// Run an estimator per subsample.
    Estimate {
        #[command(flatten)]
        common: CommonArgs,
        /// naive_fe, iv_all or iv_lasso (overrides the config).
        #[arg(long)]
        estimator: Option<String>,
    },
    /// Correlate each instrument with lagged GDP growth.
    BalanceTest(CommonArgs),
    /// Per-year means and standard deviations of panel variables.
    Summarize(CommonArgs),
    /// Avoided under-5 deaths from pollution changes.
    LivesSaved(CommonArgs),
    /// Validate the configuration and print its canonical form.
    ValidateConfig(CommonArgs),
}

#[derive(Debug, Clone, Parser)]
#[command(
    name = "plantiv",
    version,
    about = "Plant-closure instruments and post-Lasso IV estimation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

impl Cli {
    pub fn command(&self) -> Command {
        match self.command {
            CliCommand::Simulate(_) => Command::Simulate,
            CliCommand::BuildExposure(_) => Command::BuildExposure,
            CliCommand::BuildPanel(_) => Command::BuildPanel,
            CliCommand::Estimate { .. } => Command::Estimate,
            CliCommand::BalanceTest(_) => Command::BalanceTest,
            CliCommand::Summarize(_) => Command::Summarize,
            CliCommand::LivesSaved(_) => Command::LivesSaved,
            CliCommand::ValidateConfig(_) => Command::ValidateConfig,
        }
    }

    pub fn common(&self) -> &CommonArgs {
        match &self.command {
            CliCommand::Simulate(c)
            | CliCommand::BuildExposure(c)
            | CliCommand::BuildPanel(c)
            | CliCommand::BalanceTest(c)
            | CliCommand::Summarize(c)
            | CliCommand::LivesSaved(c)
            | CliCommand::ValidateConfig(c) => c,
            CliCommand::Estimate { common, .. } => common,
        }
    }
}

/// Environment overrides, read once by the binary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Env {
    pub out: Option<PathBuf>,
    pub jobs: Option<String>,
}

impl Env {
    pub fn from_process() -> Self {
        Self {
            out: std::env::var_os(ENV_OUT).map(PathBuf::from),
            jobs: std::env::var(ENV_JOBS).ok(),
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(Vec<ConfigError>),
    Core(plantiv_core::Error),
    Output { path: String, message: String },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Core(e) => e.kind(),
            CliError::Output { .. } => "output",
        }
    }

    /// 2 configuration, 3 input data, 4 estimation, 5 output or harness.
    pub fn exit_code(&self) -> i32 {
        use plantiv_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Output { .. } => 5,
            CliError::Core(e) => match e {
                E::EmptySubsample(_)
                | E::DemeanConvergence { .. }
                | E::LassoConvergence { .. }
                | E::EmptySelection
                | E::UnderIdentified(_)
                | E::RankDeficient(_)
                | E::DegenerateCorrelation(_) => 4,
                E::Harness(_) => 5,
                _ => 3,
            },
        }
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Detail<'a> {
            path: &'a str,
            reason: &'a str,
        }
        #[derive(Serialize)]
        struct Report<'a> {
            error: &'a str,
            exit_code: i32,
            message: String,
            #[serde(skip_serializing_if = "Vec::is_empty")]
            details: Vec<Detail<'a>>,
        }
        let details = match self {
            CliError::Config(errs) => errs
                .iter()
                .map(|e| Detail {
                    path: &e.path,
                    reason: &e.reason,
                })
                .collect(),
            _ => Vec::new(),
        };
        serde_json::to_string(&Report {
            error: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
            details,
        })
        .expect("error report serializes")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(errs) => {
                write!(f, "invalid configuration ({} problem", errs.len())?;
                if errs.len() != 1 {
                    f.write_str("s")?;
                }
                f.write_str(")")?;
                for e in errs {
                    write!(f, "; {e}")?;
                }
                Ok(())
            }
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Output { path, message } => write!(f, "cannot write {path}: {message}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<plantiv_core::Error> for CliError {
    fn from(e: plantiv_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<Vec<ConfigError>> for CliError {
    fn from(e: Vec<ConfigError>) -> Self {
        CliError::Config(e)
    }
}

/// A validated configuration with overrides applied.
#[derive(Debug, Clone)]
pub struct Session {
    pub command: Command,
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub out_dir: PathBuf,
    pub jobs: Option<usize>,
    pub estimator: Option<plantiv_core::estimator::EstimatorKind>,
}

impl Session {
    pub fn input_path(&self, p: &Path) -> PathBuf {
        resolve(&self.base_dir, p)
    }
}

fn config_problem(path: &str, reason: impl Into<String>) -> CliError {
    CliError::Config(vec![ConfigError {
        path: path.into(),
        reason: reason.into(),
    }])
}

/// Load the config and apply flag, environment and config precedence.
pub fn prepare(cli: &Cli, env: &Env) -> Result<Session, CliError> {
    let command = cli.command();
    let common = cli.common();
    let (mut config, base_dir) = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| config_problem("--config", format!("{}: {e}", path.display())))?;
            let cfg = RunConfig::parse(&text)?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (cfg, base)
        }
        None => (RunConfig::default(), PathBuf::new()),
    };
    if let Some(seed) = common.seed {
        config.seed = Some(seed);
    }
    if let Some(s) = &common.subsample {
        config.subsamples = vec![s.clone()];
    }

    let mut errs = config.validate(command, &base_dir, None);

    let estimator = match &cli.command {
        CliCommand::Estimate {
            estimator: Some(name),
            ..
        } => match name.parse() {
            Ok(k) => Some(k),
            Err(e) => {
                errs.push(ConfigError {
                    path: "--estimator".into(),
                    reason: format!("{e}"),
                });
                None
            }
        },
        _ => None,
    };

    let jobs = match (common.jobs, env.jobs.as_deref()) {
        (Some(j), _) => Some(j),
        (None, Some(raw)) => match raw.trim().parse::<usize>() {
            Ok(j) => Some(j),
            Err(_) => {
                errs.push(ConfigError {
                    path: ENV_JOBS.into(),
                    reason: format!("not a positive integer: `{raw}`"),
                });
                None
            }
        },
        (None, None) => config.output.jobs,
    };
    if jobs == Some(0) {
        errs.push(ConfigError {
            path: "output.jobs".into(),
            reason: "must be at least 1".into(),
        });
    }
    if !errs.is_empty() {
        return Err(CliError::Config(errs));
    }

    let out_dir = match (&common.out, &env.out) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => o.clone(),
        (None, None) => resolve(&base_dir, &config.output.dir),
    };
    config.output.jobs = jobs;
    Ok(Session {
        command,
        config,
        base_dir,
        out_dir,
        jobs,
        estimator,
    })
}

/// Everything a successful command produced, before anything touches disk.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<(String, Vec<u8>)>,
    pub inputs: Vec<FileDigest>,
    pub stdout: String,
}

/// Write staged files and the manifest. Files already written are removed
/// if a later write fails.
pub fn commit(session: &Session, outcome: &Outcome) -> Result<Manifest, CliError> {
    let manifest = Manifest::new(session, outcome);
    let mut files = outcome.files.clone();
    files.push((MANIFEST_FILE.into(), manifest.to_json().into_bytes()));

    let out_err = |path: &Path, e: std::io::Error| CliError::Output {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    fs::create_dir_all(&session.out_dir).map_err(|e| out_err(&session.out_dir, e))?;
    let mut written: Vec<PathBuf> = Vec::new();
    for (name, bytes) in &files {
        let path = session.out_dir.join(name);
        if let Err(e) = fs::write(&path, bytes) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            let _ = fs::remove_file(&path);
            return Err(out_err(&path, e));
        }
        written.push(path);
    }
    Ok(manifest)
}

/// Parse, validate, execute and commit. Returns the process exit code;
/// errors go to stderr as one JSON object.
pub fn run<I, T>(args: I, env: &Env) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, env) {
        Ok(outcome) => {
            print!("{}", outcome.stdout);
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, env: &Env) -> Result<Outcome, CliError> {
    let session = prepare(cli, env)?;
    if let Some(jobs) = session.jobs {
        // The global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let outcome = commands::dispatch(&session)?;
    if session.command != Command::ValidateConfig {
        commit(&session, &outcome)?;
    }
    Ok(outcome)
}
