//! Run configuration: command-line flags over an optional TOML file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, ValueEnum};
use serde::Deserialize;
use srvscan_core::oracle::{LiveConfig, OracleConfig, OracleMode, ReplayFallback};
use srvscan_core::slicer::DEFAULT_BUDGET;
use srvscan_core::{Backend, DetectorConfig, Format, ScanConfig, SrvType};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleChoice {
    Live,
    Replay,
    Heuristic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    Builtin,
    External,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatChoice {
    Text,
    Json,
    Sarif,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FallbackChoice {
    Error,
    Heuristic,
}

/// Flags of `scan`. Every field is optional so that unset flags fall back
/// to the config file and then to defaults.
#[derive(Args, Clone, Debug, Default)]
pub struct ScanFlags {
    /// Source files or directories to scan.
    #[arg(long = "input", value_name = "PATH")]
    pub input: Vec<PathBuf>,
    /// Positional inputs, same as --input.
    #[arg(value_name = "PATH")]
    pub paths: Vec<PathBuf>,
    /// Comma-separated replay types, e.g. SMA,SSMI.
    #[arg(long, value_delimiter = ',')]
    pub detectors: Option<Vec<String>>,
    #[arg(long, value_enum)]
    pub oracle: Option<OracleChoice>,
    #[arg(long)]
    pub oracle_endpoint: Option<String>,
    #[arg(long)]
    pub oracle_model: Option<String>,
    /// Prompt length limit in characters.
    #[arg(long)]
    pub budget: Option<usize>,
    /// JSON Lines transcript: read in replay mode, appended to otherwise.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// What replay does with a prompt missing from the transcript.
    #[arg(long, value_enum)]
    pub replay_fallback: Option<FallbackChoice>,
    #[arg(long, value_enum)]
    pub solver: Option<SolverChoice>,
    #[arg(long)]
    pub solver_path: Option<PathBuf>,
    /// Per constraint set, in milliseconds.
    #[arg(long)]
    pub solver_timeout_ms: Option<u64>,
    #[arg(long, value_enum)]
    pub format: Option<FormatChoice>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Directory for per-sink slices, answers and constraint sets.
    #[arg(long)]
    pub debug_dumps: Option<PathBuf>,
    /// TOML file with the same keys as the long flags (dashes become
    /// underscores).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Include per-phase timings in the report.
    #[arg(long)]
    pub timings: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub input: Vec<PathBuf>,
    pub detectors: Option<Vec<String>>,
    pub oracle: Option<OracleChoice>,
    pub oracle_endpoint: Option<String>,
    pub oracle_model: Option<String>,
    pub budget: Option<usize>,
    pub transcript: Option<PathBuf>,
    pub replay_fallback: Option<FallbackChoice>,
    pub solver: Option<SolverChoice>,
    pub solver_path: Option<PathBuf>,
    pub solver_timeout_ms: Option<u64>,
    pub format: Option<FormatChoice>,
    pub jobs: Option<usize>,
    pub debug_dumps: Option<PathBuf>,
    pub timings: Option<bool>,
    pub output: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// A validated run configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub scan: ScanConfig,
    pub oracle: OracleConfig,
    pub format: Format,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn network_allowed(&self) -> bool {
        matches!(self.oracle.mode, OracleMode::Live(_))
    }
}

pub fn parse_detectors(names: &[String]) -> Result<BTreeSet<SrvType>, ConfigError> {
    let mut out = BTreeSet::new();
    for n in names.iter().map(|n| n.trim()).filter(|n| !n.is_empty()) {
        if n.eq_ignore_ascii_case("all") {
            out.extend(SrvType::ALL);
        } else {
            out.insert(n.parse::<SrvType>().map_err(|e| ConfigError::Invalid(e.to_string()))?);
        }
    }
    if out.is_empty() {
        return Err(ConfigError::Invalid("no detectors selected".into()));
    }
    Ok(out)
}

/// Merges flags over the file (flags win) and checks the result.
pub fn resolve(flags: &ScanFlags) -> Result<RunConfig, ConfigError> {
    let file = match &flags.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let mut inputs: Vec<PathBuf> = flags.input.iter().chain(&flags.paths).cloned().collect();
    if inputs.is_empty() {
        inputs = file.input.clone();
    }
    if inputs.is_empty() {
        return Err(ConfigError::Invalid("no input given".into()));
    }
    if let Some(p) = inputs.iter().find(|p| !p.exists()) {
        return Err(ConfigError::Invalid(format!("input {} does not exist", p.display())));
    }

    let mut detectors = DetectorConfig::default();
    if let Some(names) = flags.detectors.as_ref().or(file.detectors.as_ref()) {
        detectors.enabled = parse_detectors(names)?;
    }

    let transcript = flags.transcript.clone().or(file.transcript);
    let mode = match flags.oracle.or(file.oracle).unwrap_or(OracleChoice::Heuristic) {
        OracleChoice::Heuristic => OracleMode::Heuristic,
        OracleChoice::Replay => {
            if transcript.is_none() {
                return Err(ConfigError::Invalid("--oracle replay needs --transcript".into()));
            }
            OracleMode::Replay
        }
        OracleChoice::Live => {
            let mut live = LiveConfig::default();
            match flags.oracle_endpoint.clone().or(file.oracle_endpoint) {
                Some(e) => live.endpoint = e,
                None => return Err(ConfigError::Invalid("--oracle live needs --oracle-endpoint".into())),
            }
            if let Some(m) = flags.oracle_model.clone().or(file.oracle_model) {
                live.model = m;
            }
            OracleMode::Live(live)
        }
    };
    let budget = flags.budget.or(file.budget).unwrap_or(DEFAULT_BUDGET);
    if budget == 0 {
        return Err(ConfigError::Invalid("budget must be positive".into()));
    }
    let replay_fallback = match flags.replay_fallback.or(file.replay_fallback) {
        Some(FallbackChoice::Heuristic) => ReplayFallback::Heuristic,
        _ => ReplayFallback::Error,
    };

    let solver_path = flags.solver_path.clone().or(file.solver_path);
    let backend = match flags.solver.or(file.solver).unwrap_or(SolverChoice::Builtin) {
        SolverChoice::Builtin => Backend::Builtin,
        SolverChoice::External => {
            let path = solver_path.unwrap_or_else(|| PathBuf::from("z3"));
            Backend::External { path }
        }
    };
    let mut scan = ScanConfig {
        inputs,
        detectors,
        backend,
        jobs: flags.jobs.or(file.jobs).unwrap_or(1),
        timings: flags.timings || file.timings.unwrap_or(false),
        debug_dumps: flags.debug_dumps.clone().or(file.debug_dumps),
        ..ScanConfig::default()
    };
    if let Some(ms) = flags.solver_timeout_ms.or(file.solver_timeout_ms) {
        scan.solver_timeout = Duration::from_millis(ms);
    }
    let format = match flags.format.or(file.format).unwrap_or(FormatChoice::Text) {
        FormatChoice::Text => Format::Text,
        FormatChoice::Json => Format::Json,
        FormatChoice::Sarif => Format::Sarif,
    };
    Ok(RunConfig {
        scan,
        oracle: OracleConfig {
            mode,
            budget,
            replay_fallback,
            transcript,
        },
        format,
        output: flags.output.clone().or(file.output),
    })
}
