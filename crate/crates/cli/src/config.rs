//! Run configuration: TOML file sections merged under command-line flags.
//!
//! ```toml
//! [model]
//! source = "gaussian"        # gaussian | explicit | empirical | example
//! sigma1 = 1.0
//! sigma2 = 2.0
//! rho = 0.0
//! # example = "1B"
//! # moments_file = "fixtures/example2_moments.txt"
//! # data = "reed.prn"
//! # recipe = "constant(1), column(0), column(1), product(0,1)"
//! # response_col = 2
//! # table_format = "prn"
//!
//! [protocol]
//! criteria = ["theorem1", "corollary2"]
//! xi = 1e-4
//! sigma_eps = 0.1
//! seed = 20240917
//! reps = 1000
//! iters = 10000
//! # gain = 0.1537
//! # criterion = "corollary2"
//! # theta_star = [1.0, 1.0]
//! mode = "auto"              # strict | relaxed | auto
//!
//! [output]
//! format = "table"           # table | csv | jsonl
//! out_dir = "out"
//! # records = "replications.jsonl"
//! ```
//!
//! When any `[model]` flag is given on the command line, the file's
//! `[model]` section is ignored as a whole; other sections merge per key.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArgs {
    /// Moment source: gaussian, explicit, empirical or example.
    #[arg(long = "model", global = true)]
    pub source: Option<String>,
    /// Built-in benchmark model: 1A, 1B, 1C, 1D or 2.
    #[arg(long, global = true)]
    pub example: Option<String>,
    #[arg(long, global = true)]
    pub sigma1: Option<f64>,
    #[arg(long, global = true)]
    pub sigma2: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    /// File with [second_moment] and [fourth_moment] sections.
    #[arg(long, global = true)]
    pub moments_file: Option<PathBuf>,
    /// Whitespace-delimited or CSV data file.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Regressor recipe, e.g. "constant(1), column(0), product(0,1)".
    #[arg(long, global = true)]
    pub recipe: Option<String>,
    /// 0-based response column of the data file.
    #[arg(long, global = true)]
    pub response_col: Option<usize>,
    /// prn or csv; guessed from the extension when absent.
    #[arg(long, global = true)]
    pub table_format: Option<String>,
}

impl ModelArgs {
    pub fn is_empty(&self) -> bool {
        *self == ModelArgs::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Strict,
    Relaxed,
    Auto,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolArgs {
    /// Comma-separated criteria (default: all).
    #[arg(long, global = true, value_delimiter = ',')]
    pub criteria: Option<Vec<String>>,
    /// Offset subtracted from the rounded sup a.
    #[arg(long, global = true)]
    pub xi: Option<f64>,
    /// Measurement noise standard deviation.
    #[arg(long, global = true)]
    pub sigma_eps: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    #[arg(long, global = true)]
    pub iters: Option<u64>,
    /// Explicit gain; overrides the gain derived from a criterion.
    #[arg(long, global = true)]
    pub gain: Option<f64>,
    /// Criterion whose sup a (rounded, minus xi) gives the simulation gain.
    #[arg(long, global = true)]
    pub criterion: Option<String>,
    /// True parameter, comma-separated.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta_star: Option<Vec<f64>>,
    /// Tolerance handling of the certified searches.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<Mode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Table,
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputArgs {
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Directory for report files.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Write per-replication JSON lines here.
    #[arg(long, global = true)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub model: ModelArgs,
    #[serde(default)]
    pub protocol: ProtocolArgs,
    #[serde(default)]
    pub output: OutputArgs,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

macro_rules! merge_fields {
    ($flags:expr, $file:expr, $($f:ident),*) => {
        $( if $flags.$f.is_none() { $flags.$f = $file.$f.clone(); } )*
    };
}

/// Flags win over the file.
pub fn merge(mut model: ModelArgs, mut protocol: ProtocolArgs, mut output: OutputArgs, file: &FileConfig) -> (ModelArgs, ProtocolArgs, OutputArgs) {
    if model.is_empty() {
        model = file.model.clone();
    }
    let fp = &file.protocol;
    merge_fields!(protocol, fp, criteria, xi, sigma_eps, seed, reps, iters, gain, criterion, theta_star, mode);
    let fo = &file.output;
    merge_fields!(output, fo, format, out_dir, records);
    (model, protocol, output)
}
