//! Drivers shared by the command line and the test suites: rate studies
//! across n and exhaustive verification of the exact identities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::free_energy::{find_lambda_max, CenteringResult};
use crate::metrics::{family_distance, fit_rate, gclass_family, smooth_family, RateFit, TestFunction};
use crate::model::{conditional_spin_distribution, ModelParams, PatternSet, SpinConfig};
use crate::sampling::{exact_pair_law, gibbs_probabilities, run_chains_with, ChainConfig, SampleBatch};
use crate::stein::{
    bound_nonsmooth, bound_smooth, build_regression, exact_states, stein_report_from_stats, ReportOptions, SteinReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Smooth,
    Gclass,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Smooth => "smooth",
            Family::Gclass => "gclass",
        }
    }

    pub fn members(self, k: usize) -> Vec<TestFunction> {
        match self {
            Family::Smooth => smooth_family(k),
            Family::Gclass => gclass_family(k),
        }
    }
}

/// Replaces sampling by the exact curve `c n^exponent` (plumbing check).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRate {
    pub c: f64,
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudyConfig {
    pub p: usize,
    pub beta: f64,
    pub h: f64,
    #[serde(default = "one_i64")]
    pub l: i64,
    /// Projection dimension; defaults to `p`.
    #[serde(default)]
    pub k: Option<usize>,
    pub n_values: Vec<usize>,
    pub chain: ChainConfig,
    pub pattern_seed: u64,
    #[serde(default)]
    pub quadrature_seed: u64,
    pub families: Vec<Family>,
    #[serde(default)]
    pub report: ReportOptions,
    #[serde(default)]
    pub synthetic: Option<SyntheticRate>,
    /// Reduce the variance of the empirical means with the exchangeable-pair
    /// control variates of [`crate::stein::StateStats::control_variates`].
    #[serde(default = "yes")]
    pub control_variates: bool,
}

fn yes() -> bool {
    true
}

fn one_i64() -> i64 {
    1
}

impl RateStudyConfig {
    pub fn params_for(&self, n: usize) -> Result<ModelParams> {
        ModelParams::new(n, self.p, self.beta, self.h, self.l, self.k.unwrap_or(self.p))
    }
}

/// One `(n, g)` row of a rate study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub family: Family,
    pub g_id: String,
    pub distance: f64,
    pub se: f64,
    /// Smooth bound with the member's derivative norms, or the non-smooth bound.
    pub bound: Option<f64>,
    pub a_constant: Option<f64>,
    pub noise_dominated: bool,
}

/// Per-n summary: family suprema, moments and the Stein report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    pub family_distance: Vec<(Family, f64, f64, bool)>,
    /// `E|W_1|^m` for `m = 1..4`.
    pub abs_moments: [f64; 4],
    pub centering: CenteringResult,
    pub stein: Option<SteinReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyFit {
    pub family: Family,
    pub fit: Option<RateFit>,
    pub excluded_n: Vec<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudyResult {
    pub rows: Vec<RateRow>,
    pub points: Vec<RatePoint>,
    pub fits: Vec<FamilyFit>,
}

/// Absolute moments `E|W_1|^m`, `m = 1..4`.
pub fn abs_moments(batch: &SampleBatch) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (r, row) in batch.rows().enumerate() {
        let w = batch.weight(r);
        let a = row[0].abs();
        let mut pow = 1.0;
        for m in out.iter_mut() {
            pow *= a;
            *m += w * pow;
        }
    }
    out
}

fn synthetic_study(cfg: &RateStudyConfig, syn: SyntheticRate) -> Result<RateStudyResult> {
    let mut rows = Vec::new();
    for &n in &cfg.n_values {
        for &family in &cfg.families {
            rows.push(RateRow {
                n,
                family,
                g_id: "synthetic".into(),
                distance: syn.c * (n as f64).powf(syn.exponent),
                se: 0.0,
                bound: None,
                a_constant: None,
                noise_dominated: false,
            });
        }
    }
    let fits = cfg
        .families
        .iter()
        .map(|&family| {
            let d: Vec<f64> = rows.iter().filter(|r| r.family == family).map(|r| r.distance).collect();
            finish_fit(family, &cfg.n_values, &d, Vec::new())
        })
        .collect();
    Ok(RateStudyResult { rows, points: Vec::new(), fits })
}

fn finish_fit(family: Family, ns: &[usize], d: &[f64], excluded_n: Vec<usize>) -> FamilyFit {
    match fit_rate(ns, d) {
        Ok(fit) => FamilyFit { family, fit: Some(fit), excluded_n, error: None },
        Err(e) => FamilyFit { family, fit: None, excluded_n, error: Some(e.to_string()) },
    }
}

/// Samples every `n` of the grid, measures the family distances against
/// `N(0, Sigma_hat)`, evaluates the Stein bounds and fits `log distance ~ log n`
/// per family on the points that are not noise-dominated.
///
/// Returns `NoiseDominated` when every point of every family is noise-dominated.
pub fn rate_study(cfg: &RateStudyConfig) -> Result<RateStudyResult> {
    if cfg.n_values.len() < 4 || cfg.n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::TooFewPoints { got: cfg.n_values.len(), need: 4 });
    }
    if cfg.families.is_empty() {
        return Err(Error::InvalidParams("no test family selected".into()));
    }
    if let Some(syn) = cfg.synthetic {
        return synthetic_study(cfg, syn);
    }
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for &n in &cfg.n_values {
        let params = cfg.params_for(n)?;
        let xi = PatternSet::generate(n, cfg.p, cfg.pattern_seed)?;
        let centering = find_lambda_max(&xi, &params)?;
        let reg = build_regression(&xi, &params, &centering)?;
        let out = run_chains_with(&xi, &params, &centering, &cfg.chain, |v| reg.state_stats(v.sigma, v.sums, &xi))?;
        let stein = stein_report_from_stats(&params, &reg, &out.probes, &cfg.report)?;
        let sigma = stein.sigma_hat.clone();
        let controls: Option<Vec<Vec<f64>>> =
            cfg.control_variates.then(|| out.probes.iter().map(|s| s.control_variates()).collect());
        let mut family_summary = Vec::new();
        for &family in &cfg.families {
            let members = family.members(params.k);
            let fd = family_distance(&out.batch, &members, &sigma, cfg.quadrature_seed, controls.as_deref())?;
            for (g, m) in members.iter().zip(&fd.members) {
                let bound = match family {
                    Family::Smooth => Some(bound_smooth(
                        &crate::stein::Terms { a: stein.term_a, b: stein.term_b, c: stein.term_c, a1: 0.0, a2: 0.0 },
                        stein.sigma_norm,
                        params.k,
                        g.g_norms.unwrap_or([1.0; 3]),
                    )),
                    Family::Gclass => bound_nonsmooth(
                        &crate::stein::NonsmoothInputs {
                            a1: stein.term_a1,
                            a2: stein.term_a2,
                            a3: stein.term_a3,
                            sigma_norm: stein.sigma_norm,
                            sum_mean_abs_w: stein.mean_abs_w.iter().sum(),
                            delta_a: stein.delta_a,
                        },
                        g.a_constant.unwrap_or(1.0).max(1.0),
                        cfg.report.c_knob,
                    )
                    .ok()
                    .map(|b| b.value),
                };
                rows.push(RateRow {
                    n,
                    family,
                    g_id: m.g_id.clone(),
                    distance: m.distance,
                    se: m.se,
                    bound,
                    a_constant: g.a_constant,
                    noise_dominated: m.noise_dominated,
                });
            }
            family_summary.push((family, fd.distance, fd.se, fd.noise_dominated));
        }
        let mut stein = stein;
        stein.seeds = Some(out.chain_seeds);
        points.push(RatePoint { n, family_distance: family_summary, abs_moments: abs_moments(&out.batch), centering, stein: Some(stein) });
    }

    let mut any_signal = false;
    let fits = cfg
        .families
        .iter()
        .map(|&family| {
            let mut ns = Vec::new();
            let mut ds = Vec::new();
            let mut excluded = Vec::new();
            for pt in &points {
                let &(_, d, _, noisy) = pt.family_distance.iter().find(|f| f.0 == family).expect("family measured");
                if noisy {
                    excluded.push(pt.n);
                } else {
                    ns.push(pt.n);
                    ds.push(d);
                }
            }
            any_signal |= !ns.is_empty();
            finish_fit(family, &ns, &ds, excluded)
        })
        .collect();
    if !any_signal {
        return Err(Error::NoiseDominated);
    }
    Ok(RateStudyResult { rows, points, fits })
}

/// Maximum discrepancies of the exact identities on one enumerated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactVerification {
    pub params: ModelParams,
    pub pattern_seed: u64,
    /// Conditional spin law from the Gibbs weights versus the logistic formula.
    pub conditional_law_error: f64,
    /// `max |E[W' - W | sigma] + Lambda W - R|`.
    pub regression_residual: f64,
    /// Swap asymmetry of the joint law of the pair.
    pub exchangeability_error: f64,
    /// Change of the Gibbs vector under `n` exact single-site heat-bath steps.
    pub stationarity_error: f64,
}

/// Checks the conditional law, the regression identity, exchangeability and
/// stationarity by exhaustive enumeration.
pub fn verify_exact(xi: &PatternSet, params: &ModelParams, centering: &CenteringResult) -> Result<ExactVerification> {
    let probs = gibbs_probabilities(xi, params)?;
    let n = params.n;
    let mut conditional_law_error = 0.0_f64;
    for bits in 0..(1u64 << n) {
        let sigma = SpinConfig::from_bits(bits, n);
        for i in 0..n {
            let other = bits ^ (1 << i);
            let up = if bits >> i & 1 == 1 { bits } else { other };
            let down = up ^ (1 << i);
            let enumerated = probs[up as usize] / (probs[up as usize] + probs[down as usize]);
            let law = conditional_spin_distribution(i, &sigma, xi, params)?;
            conditional_law_error = conditional_law_error.max((enumerated - law.p_plus).abs());
        }
    }
    let reg = crate::stein::build_regression_identity_only(xi, params, centering)?;
    let ex = exact_states(xi, params, &reg)?;
    let regression_residual = ex.stats.iter().map(|s| s.residual).fold(0.0, f64::max);
    let law = exact_pair_law(xi, params)?;
    let exchangeability_error = law
        .iter()
        .map(|((a, b), p)| (p - law.get(&(b.clone(), a.clone())).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max);
    let mut d = probs.clone();
    for _ in 0..n {
        d = crate::sampling::heat_bath_step(&d, xi, params)?;
    }
    let stationarity_error = d.iter().zip(&probs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(ExactVerification {
        params: *params,
        pattern_seed: xi.seed(),
        conditional_law_error,
        regression_residual,
        exchangeability_error,
        stationarity_error,
    })
}
