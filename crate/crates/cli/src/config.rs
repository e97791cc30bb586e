//! Experiment configurations. A config file, a manifest and every JSON report
//! share the top-level keys `schema_version` and `command`, so any of them can
//! be passed back through `--config`.

use std::path::{Path, PathBuf};

use hopfield_core::model::{ModelParams, PatternSet};
use hopfield_core::sampling::ChainConfig;
use hopfield_core::stein::{Mode, ReportOptions};
use hopfield_core::study::{Family, RateStudyConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub command: CommandConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandConfig {
    GenPatterns(GenPatternsConfig),
    FixedPoint(FixedPointConfig),
    Center(CenterConfig),
    Sample(SampleConfig),
    SteinReport(SteinConfig),
    RateStudy(RateStudyConfig),
    HsCheck(HsConfig),
    VerifyExact(VerifyConfig),
}

impl CommandConfig {
    pub fn name(&self) -> &'static str {
        match self {
            CommandConfig::GenPatterns(_) => "gen-patterns",
            CommandConfig::FixedPoint(_) => "fixed-point",
            CommandConfig::Center(_) => "center",
            CommandConfig::Sample(_) => "sample",
            CommandConfig::SteinReport(_) => "stein-report",
            CommandConfig::RateStudy(_) => "rate-study",
            CommandConfig::HsCheck(_) => "hs-check",
            CommandConfig::VerifyExact(_) => "verify-exact",
        }
    }
}

/// Model parameters plus the source of the patterns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n: usize,
    pub p: usize,
    pub beta: f64,
    pub h: f64,
    #[serde(default = "one")]
    pub l: i64,
    /// Projection dimension; `p` when absent.
    #[serde(default)]
    pub k: Option<usize>,
    pub pattern_seed: u64,
    /// Read the patterns from this CSV instead of generating them.
    #[serde(default)]
    pub patterns_csv: Option<PathBuf>,
}

fn one() -> i64 {
    1
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { n: 100, p: 1, beta: 1.5, h: 0.2, l: 1, k: None, pattern_seed: 0, patterns_csv: None }
    }
}

impl ModelSpec {
    pub fn params(&self) -> hopfield_core::Result<ModelParams> {
        ModelParams::new(self.n, self.p, self.beta, self.h, self.l, self.k.unwrap_or(self.p))
    }

    pub fn patterns(&self) -> Result<PatternSet, CliError> {
        match &self.patterns_csv {
            None => Ok(PatternSet::generate(self.n, self.p, self.pattern_seed)?),
            Some(path) => {
                let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
                let xi = hopfield_core::io::read_patterns_csv(file, self.pattern_seed)?;
                if xi.n() != self.n || xi.p() != self.p {
                    return Err(CliError::Usage(format!(
                        "{} holds a {}x{} pattern matrix, config says {}x{}",
                        path.display(),
                        xi.n(),
                        xi.p(),
                        self.n,
                        self.p
                    )));
                }
                Ok(xi)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenPatternsConfig {
    pub n: usize,
    pub p: usize,
    pub pattern_seed: u64,
}

impl Default for GenPatternsConfig {
    fn default() -> Self {
        Self { n: 100, p: 1, pattern_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointConfig {
    pub beta: f64,
    pub h: f64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self { beta: 1.5, h: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CenterConfig {
    pub model: ModelSpec,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleConfig {
    pub model: ModelSpec,
    pub chain: ChainConfig,
    /// Enumerate all `2^n` states instead of sampling.
    #[serde(default)]
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteinConfig {
    pub model: ModelSpec,
    pub mode: Mode,
    pub chain: ChainConfig,
    #[serde(default)]
    pub report: ReportOptions,
}

impl Default for SteinConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec { n: 8, ..ModelSpec::default() },
            mode: Mode::Exact,
            chain: ChainConfig::default(),
            report: ReportOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsConfig {
    pub model: ModelSpec,
    pub chain: ChainConfig,
    pub v_seed: u64,
}

impl Default for HsConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::default(),
            chain: ChainConfig { n_samples: 100_000, ..ChainConfig::default() },
            v_seed: 1,
        }
    }
}

/// Grid of enumerated instances checked by `verify-exact`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub n_values: Vec<usize>,
    pub p_values: Vec<usize>,
    pub betas: Vec<f64>,
    pub hs: Vec<f64>,
    pub pattern_seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            n_values: (2..=8).collect(),
            p_values: vec![1, 2],
            betas: vec![0.5, 1.5],
            hs: vec![0.0, 0.3],
            pattern_seed: 0,
        }
    }
}

pub fn default_rate_study() -> RateStudyConfig {
    RateStudyConfig {
        p: 1,
        beta: 1.5,
        h: 0.2,
        l: 1,
        k: None,
        n_values: vec![64, 128, 256, 512, 1024, 2048],
        chain: ChainConfig { n_samples: 100_000, ..ChainConfig::default() },
        pattern_seed: 0,
        quadrature_seed: 0,
        families: vec![Family::Smooth, Family::Gclass],
        report: ReportOptions::default(),
        synthetic: None,
        control_variates: true,
    }
}

/// Reads a config, manifest or report. Unknown top-level keys are ignored.
pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(CliError::Usage(format!(
            "{}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
            path.display(),
            cfg.schema_version
        )));
    }
    Ok(cfg)
}
