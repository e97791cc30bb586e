//! Command-line flags and their merge with a `--config` file. Flags win over the
//! config; the config wins over the built-in defaults.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hopfield_core::sampling::ChainConfig;
use hopfield_core::stein::Mode;
use hopfield_core::study::{Family, SyntheticRate};

use crate::config::{
    self, CenterConfig, CommandConfig, ExperimentConfig, FixedPointConfig, GenPatternsConfig, HsConfig, ModelSpec,
    SampleConfig, SteinConfig, VerifyConfig, SCHEMA_VERSION,
};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "hopfield-lab", version, about = "Fluctuation experiments for the Hopfield model")]
pub struct Cli {
    /// JSON config, manifest or report to start from.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Pattern seed for gen-patterns, center and verify-exact; chain seed otherwise.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory. Without it the main artifact goes to stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Draw i.i.d. symmetric +-1 patterns.
    GenPatterns(GenPatternsFlags),
    /// Solve beta x + h = arctanh(x).
    FixedPoint(FixedPointFlags),
    /// Maximize the free energy and report the centering.
    Center(ModelFlags),
    /// Heat-bath draws of W, or the exact law of W for small n.
    Sample(SampleFlags),
    /// Regression objects and Stein bound terms.
    SteinReport(SteinFlags),
    /// Distances to the Gaussian across a grid of n and the fitted rates.
    RateStudy(RateFlags),
    /// Compare V + W with the Hubbard-Stratonovich density.
    HsCheck(HsFlags),
    /// Check the exact identities by enumeration on a grid of small systems.
    VerifyExact(VerifyFlags),
}

#[derive(Debug, Args)]
pub struct GenPatternsFlags {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FixedPointFlags {
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub h: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ModelFlags {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub l: Option<i64>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Pattern seed (sampling commands; `--seed` sets the chain seed there).
    #[arg(long)]
    pub pattern_seed: Option<u64>,
    /// Read patterns from a CSV written by gen-patterns.
    #[arg(long)]
    pub patterns: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ChainFlags {
    /// Retained draws summed over chains.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleFlags {
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub chain: ChainFlags,
    /// Enumerate the exact law instead of sampling.
    #[arg(long)]
    pub exact: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeFlag {
    Exact,
    Mc,
}

#[derive(Debug, Args)]
pub struct SteinFlags {
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub chain: ChainFlags,
    #[arg(long, value_enum)]
    pub mode: Option<ModeFlag>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FamilyFlag {
    Smooth,
    Gclass,
}

#[derive(Debug, Args)]
pub struct RateFlags {
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub n_values: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', value_enum)]
    pub families: Option<Vec<FamilyFlag>>,
    #[arg(long)]
    pub pattern_seed: Option<u64>,
    #[command(flatten)]
    pub chain: ChainFlags,
    /// Skip sampling and fit `c n^exponent` (needs --synthetic-exponent).
    #[arg(long, requires = "synthetic_exponent")]
    pub synthetic_c: Option<f64>,
    #[arg(long, allow_hyphen_values = true, requires = "synthetic_c")]
    pub synthetic_exponent: Option<f64>,
    /// Plain empirical means, without control variates.
    #[arg(long)]
    pub no_control_variates: bool,
}

#[derive(Debug, Args)]
pub struct HsFlags {
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub chain: ChainFlags,
    #[arg(long)]
    pub v_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct VerifyFlags {
    #[arg(long, value_delimiter = ',')]
    pub n_values: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub p_values: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub hs: Option<Vec<f64>>,
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

impl ModelFlags {
    fn apply(&self, m: &mut ModelSpec) {
        set(&mut m.n, self.n);
        set(&mut m.p, self.p);
        set(&mut m.beta, self.beta);
        set(&mut m.h, self.h);
        set(&mut m.l, self.l);
        if self.k.is_some() {
            m.k = self.k;
        }
        set(&mut m.pattern_seed, self.pattern_seed);
        if self.patterns.is_some() {
            m.patterns_csv = self.patterns.clone();
        }
    }
}

impl ChainFlags {
    fn apply(&self, c: &mut ChainConfig, seed: Option<u64>) {
        set(&mut c.n_samples, self.samples);
        set(&mut c.burnin_sweeps, self.burnin);
        set(&mut c.thin_sweeps, self.thin);
        set(&mut c.n_chains, self.chains);
        set(&mut c.seed, seed);
    }
}

fn mismatch(expected: &str, found: &CommandConfig) -> CliError {
    CliError::Usage(format!("config is for `{}`, not `{expected}`", found.name()))
}

macro_rules! base {
    ($loaded:expr, $variant:ident, $name:literal, $default:expr) => {
        match $loaded {
            None => $default,
            Some(CommandConfig::$variant(c)) => c,
            Some(other) => return Err(mismatch($name, &other)),
        }
    };
}

/// Resolves the effective config: `--config` (if any), then the flags.
pub fn resolve(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let loaded = match &cli.config {
        Some(path) => Some(config::load(path)?.command),
        None => None,
    };
    let seed = cli.seed;
    let command = match &cli.command {
        Sub::GenPatterns(f) => {
            let mut c = base!(loaded, GenPatterns, "gen-patterns", GenPatternsConfig::default());
            set(&mut c.n, f.n);
            set(&mut c.p, f.p);
            set(&mut c.pattern_seed, seed);
            CommandConfig::GenPatterns(c)
        }
        Sub::FixedPoint(f) => {
            let mut c = base!(loaded, FixedPoint, "fixed-point", FixedPointConfig::default());
            set(&mut c.beta, f.beta);
            set(&mut c.h, f.h);
            CommandConfig::FixedPoint(c)
        }
        Sub::Center(f) => {
            let mut c = base!(loaded, Center, "center", CenterConfig::default());
            f.apply(&mut c.model);
            set(&mut c.model.pattern_seed, seed);
            CommandConfig::Center(c)
        }
        Sub::Sample(f) => {
            let mut c = base!(loaded, Sample, "sample", SampleConfig::default());
            f.model.apply(&mut c.model);
            f.chain.apply(&mut c.chain, seed);
            if f.exact {
                c.exact = true;
            }
            CommandConfig::Sample(c)
        }
        Sub::SteinReport(f) => {
            let mut c = base!(loaded, SteinReport, "stein-report", SteinConfig::default());
            f.model.apply(&mut c.model);
            f.chain.apply(&mut c.chain, seed);
            match f.mode {
                Some(ModeFlag::Exact) => c.mode = Mode::Exact,
                Some(ModeFlag::Mc) => c.mode = Mode::MonteCarlo,
                None => {}
            }
            CommandConfig::SteinReport(c)
        }
        Sub::RateStudy(f) => {
            let mut c = base!(loaded, RateStudy, "rate-study", config::default_rate_study());
            set(&mut c.p, f.p);
            set(&mut c.beta, f.beta);
            set(&mut c.h, f.h);
            set(&mut c.n_values, f.n_values.clone());
            if let Some(fams) = &f.families {
                c.families = fams
                    .iter()
                    .map(|f| match f {
                        FamilyFlag::Smooth => Family::Smooth,
                        FamilyFlag::Gclass => Family::Gclass,
                    })
                    .collect();
            }
            set(&mut c.pattern_seed, f.pattern_seed);
            f.chain.apply(&mut c.chain, seed);
            if let (Some(c0), Some(exponent)) = (f.synthetic_c, f.synthetic_exponent) {
                c.synthetic = Some(SyntheticRate { c: c0, exponent });
            }
            if f.no_control_variates {
                c.control_variates = false;
            }
            CommandConfig::RateStudy(c)
        }
        Sub::HsCheck(f) => {
            let mut c = base!(loaded, HsCheck, "hs-check", HsConfig::default());
            f.model.apply(&mut c.model);
            f.chain.apply(&mut c.chain, seed);
            set(&mut c.v_seed, f.v_seed);
            CommandConfig::HsCheck(c)
        }
        Sub::VerifyExact(f) => {
            let mut c = base!(loaded, VerifyExact, "verify-exact", VerifyConfig::default());
            set(&mut c.n_values, f.n_values.clone());
            set(&mut c.p_values, f.p_values.clone());
            set(&mut c.betas, f.betas.clone());
            set(&mut c.hs, f.hs.clone());
            set(&mut c.pattern_seed, seed);
            CommandConfig::VerifyExact(c)
        }
    };
    Ok(ExperimentConfig { schema_version: SCHEMA_VERSION, command })
}
