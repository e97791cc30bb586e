//! Subcommand runners. Each produces a set of named artifacts plus the bytes
//! that go to stdout when no output directory is given.

use std::path::Path;

use hopfield_core::free_energy::{curie_weiss_fixed_point, find_lambda_max};
use hopfield_core::io::{write_batch_csv, write_json, write_pairs_csv, write_patterns_csv, write_rate_csv};
use hopfield_core::metrics::hubbard_stratonovich_check;
use hopfield_core::model::{ModelParams, PatternSet};
use hopfield_core::sampling::{enumerate_distribution, run_chains};
use hopfield_core::stein::{stein_report_exact, stein_report_mc, Mode};
use hopfield_core::study::{rate_study, verify_exact, ExactVerification};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{
    CenterConfig, CommandConfig, ExperimentConfig, FixedPointConfig, GenPatternsConfig, HsConfig, SampleConfig,
    SteinConfig, VerifyConfig,
};
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

/// Files to write (name, bytes) and the stdout fallback.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
    pub stdout: Vec<u8>,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    command: &'a CommandConfig,
    provenance: &'a Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    outputs: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<T>,
}

fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_json(&mut buf, value)?;
    Ok(buf)
}

struct Builder<'a> {
    cfg: &'a ExperimentConfig,
    provenance: Value,
    files: Vec<(String, Vec<u8>)>,
}

impl<'a> Builder<'a> {
    fn new(cfg: &'a ExperimentConfig, provenance: Value) -> Self {
        Self { cfg, provenance, files: Vec::new() }
    }

    fn raw(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn report<T: Serialize>(&mut self, name: &str, result: T) -> Result<(), CliError> {
        let env = Envelope {
            schema_version: self.cfg.schema_version,
            command: &self.cfg.command,
            provenance: &self.provenance,
            outputs: None,
            result: Some(result),
        };
        let bytes = json_bytes(&env)?;
        self.raw(name, bytes);
        Ok(())
    }

    /// Appends the manifest; `stdout_from` names the artifact echoed to stdout.
    fn finish(mut self, stdout_from: &str) -> Result<Artifacts, CliError> {
        let outputs: Vec<String> = self.files.iter().map(|(n, _)| n.clone()).collect();
        let stdout = self.files.iter().find(|(n, _)| n == stdout_from).map(|(_, b)| b.clone()).unwrap_or_default();
        let env = Envelope::<()> {
            schema_version: self.cfg.schema_version,
            command: &self.cfg.command,
            provenance: &self.provenance,
            outputs: Some(outputs),
            result: None,
        };
        let manifest = json_bytes(&env)?;
        self.raw(MANIFEST, manifest);
        Ok(Artifacts { files: self.files, stdout })
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    match &cfg.command {
        CommandConfig::GenPatterns(c) => gen_patterns(cfg, c),
        CommandConfig::FixedPoint(c) => fixed_point(cfg, c),
        CommandConfig::Center(c) => center(cfg, c),
        CommandConfig::Sample(c) => sample(cfg, c),
        CommandConfig::SteinReport(c) => stein(cfg, c),
        CommandConfig::RateStudy(c) => rate(cfg, c),
        CommandConfig::HsCheck(c) => hs(cfg, c),
        CommandConfig::VerifyExact(c) => verify(cfg, c),
    }
}

/// Writes every artifact under `dir` (created if needed).
pub fn write_all(dir: &Path, artifacts: &Artifacts) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for (name, bytes) in &artifacts.files {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

fn gen_patterns(cfg: &ExperimentConfig, c: &GenPatternsConfig) -> Result<Artifacts, CliError> {
    let xi = PatternSet::generate(c.n, c.p, c.pattern_seed)?;
    let mut csv = Vec::new();
    write_patterns_csv(&mut csv, &xi)?;
    let mut b = Builder::new(cfg, json!({ "pattern_seed": c.pattern_seed }));
    b.raw("patterns.csv", csv);
    b.finish("patterns.csv")
}

fn fixed_point(cfg: &ExperimentConfig, c: &FixedPointConfig) -> Result<Artifacts, CliError> {
    let fp = curie_weiss_fixed_point(c.beta, c.h)?;
    let mut b = Builder::new(cfg, json!({}));
    b.report("fixed_point.json", fp)?;
    let mut out = b.finish("")?;
    out.stdout = json_bytes(&fp)?;
    Ok(out)
}

fn model(spec: &crate::config::ModelSpec) -> Result<(PatternSet, ModelParams), CliError> {
    let params = spec.params()?;
    let xi = spec.patterns()?;
    Ok((xi, params))
}

fn center(cfg: &ExperimentConfig, c: &CenterConfig) -> Result<Artifacts, CliError> {
    let (xi, params) = model(&c.model)?;
    let centering = find_lambda_max(&xi, &params)?;
    let mut b = Builder::new(cfg, json!({ "pattern_seed": c.model.pattern_seed }));
    b.report("centering.json", centering)?;
    b.finish("centering.json")
}

fn sample(cfg: &ExperimentConfig, c: &SampleConfig) -> Result<Artifacts, CliError> {
    let (xi, params) = model(&c.model)?;
    let centering = find_lambda_max(&xi, &params)?;
    let (batch, pairs, provenance) = if c.exact {
        let batch = enumerate_distribution(&xi, &params, &centering)?;
        let prov = json!({ "pattern_seed": c.model.pattern_seed, "mode": "exact", "centering": centering, "rows": batch.len() });
        (batch, Vec::new(), prov)
    } else {
        let out = run_chains(&xi, &params, &centering, &c.chain)?;
        let prov = json!({
            "pattern_seed": c.model.pattern_seed,
            "mode": "monte_carlo",
            "chain_seed": c.chain.seed,
            "chain_seeds": out.chain_seeds,
            "seed_rule": "chain c uses seed XOR (c+1)*0x9E3779B97F4A7C15",
            "acceptance": out.acceptance,
            "centering": centering,
            "rows": out.batch.len(),
        });
        (out.batch, out.pairs, prov)
    };
    let mut csv = Vec::new();
    write_batch_csv(&mut csv, &batch)?;
    let mut b = Builder::new(cfg, provenance);
    b.raw("samples.csv", csv);
    if c.chain.record_pairs && !c.exact {
        let mut pcsv = Vec::new();
        write_pairs_csv(&mut pcsv, &pairs)?;
        b.raw("pairs.csv", pcsv);
    }
    b.finish("samples.csv")
}

fn stein(cfg: &ExperimentConfig, c: &SteinConfig) -> Result<Artifacts, CliError> {
    let (xi, params) = model(&c.model)?;
    let centering = find_lambda_max(&xi, &params)?;
    let report = match c.mode {
        Mode::Exact => stein_report_exact(&xi, &params, &centering, &c.report)?,
        Mode::MonteCarlo => stein_report_mc(&xi, &params, &centering, &c.chain, &c.report)?,
    };
    let mut prov = json!({ "pattern_seed": c.model.pattern_seed, "centering": centering });
    if let Some(seeds) = &report.seeds {
        prov["chain_seed"] = json!(c.chain.seed);
        prov["chain_seeds"] = json!(seeds);
    }
    let mut b = Builder::new(cfg, prov);
    b.report("stein_report.json", report)?;
    b.finish("stein_report.json")
}

fn rate(cfg: &ExperimentConfig, c: &hopfield_core::study::RateStudyConfig) -> Result<Artifacts, CliError> {
    let result = rate_study(c)?;
    let chain_seeds: Vec<u64> = (0..c.chain.n_chains).map(|i| hopfield_core::sampling::chain_seed(c.chain.seed, i)).collect();
    let prov = json!({
        "pattern_seed": c.pattern_seed,
        "quadrature_seed": c.quadrature_seed,
        "chain_seed": c.chain.seed,
        "chain_seeds": chain_seeds,
    });
    let mut csv = Vec::new();
    write_rate_csv(&mut csv, c.p, c.beta, c.h, &result.rows)?;
    let mut b = Builder::new(cfg, prov);
    b.raw("rate_study.csv", csv);
    b.report("rate_fit.json", &result.fits)?;
    b.report("rate_points.json", &result.points)?;
    b.finish("rate_fit.json")
}

fn hs(cfg: &ExperimentConfig, c: &HsConfig) -> Result<Artifacts, CliError> {
    let (xi, params) = model(&c.model)?;
    let centering = find_lambda_max(&xi, &params)?;
    let out = run_chains(&xi, &params, &centering, &c.chain)?;
    let report = hubbard_stratonovich_check(&xi, &params, &centering, &out.batch, c.v_seed)?;
    let prov = json!({
        "pattern_seed": c.model.pattern_seed,
        "chain_seed": c.chain.seed,
        "chain_seeds": out.chain_seeds,
        "v_seed": c.v_seed,
        "centering": centering,
    });
    let mut b = Builder::new(cfg, prov);
    b.report("hs_check.json", report)?;
    b.finish("hs_check.json")
}

#[derive(Serialize)]
struct VerifySummary {
    instances: Vec<ExactVerification>,
    max_conditional_law_error: f64,
    max_regression_residual: f64,
    max_exchangeability_error: f64,
    max_stationarity_error: f64,
}

/// Runs every instance of the grid with `p <= n`; the critical point is skipped.
pub fn verify_grid(c: &VerifyConfig) -> Result<Vec<ExactVerification>, CliError> {
    let mut out = Vec::new();
    for &n in &c.n_values {
        for &p in c.p_values.iter().filter(|&&p| p <= n) {
            for &beta in &c.betas {
                for &h in &c.hs {
                    let params = ModelParams::unprojected(n, p, beta, h)?;
                    if params.is_critical() {
                        continue;
                    }
                    let xi = PatternSet::generate(n, p, c.pattern_seed)?;
                    let centering = find_lambda_max(&xi, &params)?;
                    out.push(verify_exact(&xi, &params, &centering)?);
                }
            }
        }
    }
    Ok(out)
}

fn verify(cfg: &ExperimentConfig, c: &VerifyConfig) -> Result<Artifacts, CliError> {
    let instances = verify_grid(c)?;
    let max = |f: fn(&ExactVerification) -> f64| instances.iter().map(f).fold(0.0, f64::max);
    let summary = VerifySummary {
        max_conditional_law_error: max(|v| v.conditional_law_error),
        max_regression_residual: max(|v| v.regression_residual),
        max_exchangeability_error: max(|v| v.exchangeability_error),
        max_stationarity_error: max(|v| v.stationarity_error),
        instances,
    };
    let mut b = Builder::new(cfg, json!({ "pattern_seed": c.pattern_seed }));
    b.report("verify_exact.json", summary)?;
    b.finish("verify_exact.json")
}
