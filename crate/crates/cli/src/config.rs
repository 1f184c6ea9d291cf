//! Layered run configuration: compiled defaults, then the JSON config
//! file, then command-line flags, later layers overriding earlier ones.

use std::fmt;
use std::fs;
use std::path::PathBuf;

use serde::Deserialize;

use crf_refine_core::{CrfParams, FilterMode, SweepGrid};

use crate::CommonArgs;

/// Errors split by exit code: usage/config problems exit 2, data problems
/// exit 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 1,
        }
    }

    pub fn usage(message: impl fmt::Display) -> Self {
        CliError::Usage(message.to_string())
    }

    pub fn data(message: impl fmt::Display) -> Self {
        CliError::Data(message.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

/// Optional HU windowing applied to images as they are loaded. Absent
/// means images are already on the byte scale.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HuWindowConfig {
    pub center: f32,
    pub width: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FilterArg {
    Lattice,
    Brute,
}

impl From<FilterArg> for FilterMode {
    fn from(arg: FilterArg) -> FilterMode {
        match arg {
            FilterArg::Lattice => FilterMode::Lattice,
            FilterArg::Brute => FilterMode::BruteForce,
        }
    }
}

/// Per-parameter overrides as they appear in the config file; unset fields
/// keep the defaults.
#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamOverrides {
    pub w1: Option<f32>,
    pub w2: Option<f32>,
    pub sigma_alpha: Option<f32>,
    pub sigma_beta: Option<f32>,
    pub sigma_gamma: Option<f32>,
    pub iterations: Option<u32>,
}

/// The config file schema. Every field is optional; unknown keys are
/// rejected so typos fail loudly.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub params: ParamOverrides,
    pub floor: Option<f32>,
    pub hu_window: Option<HuWindowConfig>,
    pub sweep: Option<SweepGrid>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub filter: Option<FilterArg>,
    pub positive_label: Option<u8>,
}

/// Fully resolved settings a command runs with.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: CrfParams,
    pub floor: f32,
    pub hu_window: Option<HuWindowConfig>,
    pub sweep: SweepGrid,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: PathBuf,
    /// Whether `out` came from a flag or the config file rather than the
    /// compiled default; commands that print to stdout when no output path
    /// is given key off this.
    pub out_set: bool,
    pub mode: FilterMode,
    pub positive_label: u8,
}

impl RunConfig {
    /// Resolves defaults, config file, and flags, in that precedence
    /// order, and validates the result.
    pub fn resolve(common: &CommonArgs) -> Result<RunConfig, CliError> {
        let file = match &common.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
                serde_json::from_str::<ConfigFile>(&text)
                    .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?
            }
            None => ConfigFile::default(),
        };

        let defaults = CrfParams::default();
        let params = CrfParams {
            w1: common.w1.or(file.params.w1).unwrap_or(defaults.w1),
            w2: common.w2.or(file.params.w2).unwrap_or(defaults.w2),
            sigma_alpha: common
                .sigma_alpha
                .or(file.params.sigma_alpha)
                .unwrap_or(defaults.sigma_alpha),
            sigma_beta: common
                .sigma_beta
                .or(file.params.sigma_beta)
                .unwrap_or(defaults.sigma_beta),
            sigma_gamma: common
                .sigma_gamma
                .or(file.params.sigma_gamma)
                .unwrap_or(defaults.sigma_gamma),
            iterations: common
                .iterations
                .or(file.params.iterations)
                .unwrap_or(defaults.iterations),
        };
        params.validate().map_err(CliError::usage)?;

        let floor = common.floor.or(file.floor).unwrap_or(1e-8);
        if !floor.is_finite() || floor <= 0.0 || floor >= 1.0 {
            return Err(CliError::usage(format!(
                "--floor must lie strictly between 0 and 1, got {floor}"
            )));
        }
        let sweep = file.sweep.unwrap_or_default();
        sweep.validate().map_err(CliError::usage)?;

        Ok(RunConfig {
            params,
            floor,
            hu_window: file.hu_window,
            sweep,
            seed: common.seed.or(file.seed).unwrap_or(0),
            threads: common.threads.or(file.threads),
            out_set: common.out.is_some() || file.out.is_some(),
            out: common
                .out
                .clone()
                .or(file.out)
                .unwrap_or_else(|| PathBuf::from("out")),
            mode: common
                .filter
                .or(file.filter)
                .map_or(FilterMode::Lattice, FilterMode::from),
            positive_label: common.positive_label.or(file.positive_label).unwrap_or(1),
        })
    }
}
