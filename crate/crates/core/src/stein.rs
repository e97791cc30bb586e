//! Exchangeable-pair regression objects and the terms of the smooth and
//! non-smooth Stein bounds.
//!
//! All inner conditional expectations condition on the full configuration
//! `sigma`; in exact mode the variance terms are also computed conditionally on
//! `W` by grouping states with equal projected overlap sums.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::free_energy::{CenteringResult, RowGroups};
use crate::linalg::{checked_inverse, matrix_rows, symmetric_operator_norm};
use crate::model::{effective_field, local_field_from_sums, ModelParams, PatternSet};
use crate::sampling::{
    check_centering, check_inputs, for_each_state, gibbs_probabilities, run_chains_with, ChainConfig,
};

/// Largest n for exact-mode reports.
pub const STEIN_ENUMERATION_LIMIT: usize = 16;
/// Fewest draws accepted by Monte Carlo reports.
pub const MIN_MC_DRAWS: usize = 100;
const SE_BATCHES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    MonteCarlo,
}

/// `Lambda = (1/n)(Id - beta M)` on the leading `k x k` block, where
/// `M = (1/n) sum_j sech^2<lambda, xi_j> xi_j xi_j^t`; for `beta > 0` this is
/// `(beta/n)[-D^2 Phi(lambda)]`.
#[derive(Debug, Clone)]
pub struct RegressionObjects {
    pub lambda_matrix: DMatrix<f64>,
    pub lambda_inverse: DMatrix<f64>,
    /// `lambda^(i) = sum_m |(Lambda^{-1})_{m,i}|`.
    pub lambda_i: Vec<f64>,
    pub k: usize,
    params: ModelParams,
    lambda: Vec<f64>,
    x_center: Vec<f64>,
    groups: RowGroups,
    grad_at_center: Vec<f64>,
    /// `D^2 Phi_{i,t}` for `i < k <= t`, zero elsewhere.
    cross_block: DMatrix<f64>,
    third: Vec<f64>,
}

/// Exact per-configuration quantities entering the bound terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateStats {
    pub w: Vec<f64>,
    /// `E[(W'_i - W_i)(W'_j - W_j) | sigma]`, row-major `k x k`.
    pub inner2: Vec<f64>,
    /// `E[|(W'_i - W_i)(W'_j - W_j)(W'_m - W_m)| | sigma]`, the same for every index triple.
    pub inner3: f64,
    /// `E[W' - W | sigma]` from the flip probabilities.
    pub cond_mean: Vec<f64>,
    pub r: Vec<f64>,
    pub r1: Vec<f64>,
    /// `(1/sqrt n) d_i Phi(lambda + beta W / sqrt n) + (Lambda W)_i`.
    pub r2: Vec<f64>,
    /// Second-order Taylor form of `R_2`.
    pub r2_taylor: Vec<f64>,
    /// `max_i |E[W'_i - W_i | sigma] + (Lambda W)_i - R_i|`.
    pub residual: f64,
}

pub fn build_regression(
    xi: &PatternSet,
    params: &ModelParams,
    centering: &CenteringResult,
) -> Result<RegressionObjects> {
    build(xi, params, centering, true)
}

/// Regression objects for checking the identity alone, which does not involve
/// `Lambda^{-1}`; a singular `Lambda` leaves the inverse-based fields NaN.
pub(crate) fn build_regression_identity_only(
    xi: &PatternSet,
    params: &ModelParams,
    centering: &CenteringResult,
) -> Result<RegressionObjects> {
    build(xi, params, centering, false)
}

fn build(xi: &PatternSet, params: &ModelParams, centering: &CenteringResult, need_inverse: bool) -> Result<RegressionObjects> {
    check_inputs(xi, params)?;
    check_centering(params, centering)?;
    let (n, p, k) = (params.n as f64, params.p, params.k);
    let groups = RowGroups::new(xi);
    let m = groups.sech2_moment(&centering.lambda);
    let lambda_matrix = DMatrix::from_fn(k, k, |i, j| (f64::from(u8::from(i == j)) - params.beta * m[(i, j)]) / n);
    let lambda_inverse = match checked_inverse(&lambda_matrix) {
        Err(Error::SingularLambda { .. }) if !need_inverse => DMatrix::from_element(k, k, f64::NAN),
        other => other?,
    };
    let lambda_i = (0..k).map(|i| lambda_inverse.column(i).iter().map(|v| v.abs()).sum()).collect();
    let tm = groups.tanh_mean(&centering.lambda);
    let grad_at_center = (0..p).map(|i| tm[i] - centering.x_center[i]).collect();
    let cross_block = DMatrix::from_fn(k, p, |i, t| if t >= k { m[(i, t)] } else { 0.0 });
    let third = groups.third_derivative(&centering.lambda);
    Ok(RegressionObjects {
        lambda_matrix,
        lambda_inverse,
        lambda_i,
        k,
        params: *params,
        lambda: centering.lambda.clone(),
        x_center: centering.x_center.clone(),
        groups,
        grad_at_center,
        cross_block,
        third,
    })
}

impl RegressionObjects {
    /// `A_3 = sum_i max_j |(Lambda^{-1})_{j,i}|`.
    pub fn a3(&self) -> f64 {
        (0..self.k).map(|i| self.lambda_inverse.column(i).iter().fold(0.0_f64, |a, v| a.max(v.abs()))).sum()
    }

    /// Per-state quantities for configuration `sigma` with overlap sums `sums`.
    pub fn state_stats(&self, sigma: &[i8], sums: &[i64], xi: &PatternSet) -> StateStats {
        let params = &self.params;
        let (n, p, k) = (params.n, params.p, self.k);
        let nf = n as f64;
        let sqn = nf.sqrt();
        let mut cond_mean = vec![0.0; k];
        let mut r1 = vec![0.0; k];
        let mut inner2 = vec![0.0; k * k];
        let mut flip_sum = 0.0;
        for j in 0..n {
            let s = sigma[j];
            let row = xi.row(j);
            let t_self = effective_field(j, s, sums, xi, params).tanh();
            let full = params.beta * local_field_from_sums(j, s, sums, xi, false) + params.h * xi.signed_entry(j, params.l);
            let t_full = full.tanh();
            let pflip = 0.5 * (1.0 - s as f64 * t_self);
            flip_sum += pflip;
            for a in 0..k {
                let xa = row[a] as f64;
                cond_mean[a] -= 2.0 * pflip * s as f64 * xa;
                r1[a] += xa * (t_self - t_full);
                for b in 0..k {
                    inner2[a * k + b] += pflip * xa * row[b] as f64;
                }
            }
        }
        let n15 = nf * sqn;
        cond_mean.iter_mut().for_each(|v| *v /= n15);
        r1.iter_mut().for_each(|v| *v /= n15);
        inner2.iter_mut().for_each(|v| *v *= 4.0 / (nf * nf));
        let inner3 = 8.0 * flip_sum / (nf * nf * sqn);

        let w_full: Vec<f64> = (0..p).map(|a| sqn * (sums[a] as f64 / nf - self.x_center[a])).collect();
        let mu: Vec<f64> = (0..p).map(|a| self.lambda[a] + params.beta * w_full[a] / sqn).collect();
        let tm = self.groups.tanh_mean(&mu);
        let lw: Vec<f64> = (0..k).map(|a| (0..k).map(|b| self.lambda_matrix[(a, b)] * w_full[b]).sum()).collect();
        let mut r2 = vec![0.0; k];
        let mut r2_taylor = vec![0.0; k];
        let mut r = vec![0.0; k];
        let mut residual = 0.0_f64;
        let b2 = params.beta * params.beta;
        for a in 0..k {
            // gradient of Phi at mu, written through x = (lambda - h e_l)/beta
            let grad = tm[a] - self.x_center[a] - w_full[a] / sqn;
            r2[a] = grad / sqn + lw[a];
            r[a] = r1[a] + r2[a];
            residual = residual.max((cond_mean[a] + lw[a] - r[a]).abs());
            let cross: f64 = (k..p).map(|t| self.cross_block[(a, t)] * w_full[t]).sum::<f64>() * params.beta / nf;
            let mut quad = 0.0;
            for s in 0..p {
                for t in 0..p {
                    quad += self.third[(a * p + s) * p + t] * w_full[s] * w_full[t];
                }
            }
            r2_taylor[a] = self.grad_at_center[a] / sqn + cross + 0.5 * b2 * quad / (nf * sqn);
        }
        StateStats { w: w_full[..k].to_vec(), inner2, inner3, cond_mean, r, r1, r2, r2_taylor, residual }
    }
}

impl StateStats {
    /// Statistics with exactly zero mean under the stationary law, from
    /// `E[W' - W] = 0` and `E[W'W'^t - W W^t] = 0`: the conditional mean and the
    /// upper triangle of `W m^t + m W^t + E[(W'-W)(W'-W)^t | sigma]`.
    pub fn control_variates(&self) -> Vec<f64> {
        let k = self.w.len();
        let mut out = self.cond_mean.clone();
        for i in 0..k {
            for j in i..k {
                out.push(self.w[i] * self.cond_mean[j] + self.w[j] * self.cond_mean[i] + self.inner2[i * k + j]);
            }
        }
        out
    }
}

/// Bound terms computed from a weighted set of states.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Terms {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub a1: f64,
    pub a2: f64,
}

struct Moments {
    terms: Terms,
    sigma: DMatrix<f64>,
    mean_w: Vec<f64>,
    mean_abs_w: Vec<f64>,
}

fn weighted_var(values: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let mean: f64 = values.clone().map(|(v, w)| v * w).sum();
    values.map(|(v, w)| w * (v - mean).powi(2)).sum()
}

/// Assembles A, B, C, A_1 and A_2 from per-state statistics with probability
/// weights summing to one.
pub fn terms_from_states(stats: &[StateStats], weights: &[f64], reg: &RegressionObjects) -> Terms {
    let k = reg.k;
    let linv = &reg.lambda_inverse;
    let mut t = Terms::default();
    for i in 0..k {
        for j in 0..k {
            let v = weighted_var(stats.iter().zip(weights).map(|(s, &w)| (s.inner2[i * k + j], w))).max(0.0);
            t.a += reg.lambda_i[i] * v.sqrt();
            t.a1 += linv[(j, i)].abs() * v.sqrt();
        }
        let vr = weighted_var(stats.iter().zip(weights).map(|(s, &w)| (s.r[i], w))).max(0.0);
        t.c += reg.lambda_i[i] * vr.sqrt();
        let second: f64 = stats.iter().zip(weights).map(|(s, &w)| w * s.r[i] * s.r[i]).sum();
        let col: f64 = (0..k).map(|j| linv[(j, i)].abs()).sum();
        t.a2 += col * second.sqrt();
    }
    let e3: f64 = stats.iter().zip(weights).map(|(s, &w)| w * s.inner3).sum();
    t.b = reg.lambda_i.iter().sum::<f64>() * (k * k) as f64 * e3;
    t
}

fn moments(stats: &[StateStats], weights: &[f64], reg: &RegressionObjects) -> Moments {
    let k = reg.k;
    let mut sigma = DMatrix::zeros(k, k);
    let mut mean_w = vec![0.0; k];
    let mut mean_abs_w = vec![0.0; k];
    for (s, &w) in stats.iter().zip(weights) {
        for a in 0..k {
            mean_w[a] += w * s.w[a];
            mean_abs_w[a] += w * s.w[a].abs();
            for b in 0..k {
                sigma[(a, b)] += w * s.w[a] * s.w[b];
            }
        }
    }
    Moments { terms: terms_from_states(stats, weights, reg), sigma, mean_w, mean_abs_w }
}

/// `E[W W^t]`, weight-exact for enumerations and the sample second moment otherwise.
pub fn empirical_covariance(batch: &crate::sampling::SampleBatch) -> Result<DMatrix<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let k = batch.k;
    let mut sigma = DMatrix::zeros(k, k);
    for (r, row) in batch.rows().enumerate() {
        let w = batch.weight(r);
        for a in 0..k {
            for b in 0..k {
                sigma[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    Ok(sigma)
}

/// `(|g|_2/4) A + (|g|_3/12) B + (|g|_1 + d ||Sigma||^{1/2} |g|_2 / 2) C`.
pub fn bound_smooth(terms: &Terms, sigma_norm: f64, d: usize, g_norms: [f64; 3]) -> f64 {
    let [g1, g2, g3] = g_norms;
    g2 / 4.0 * terms.a + g3 / 12.0 * terms.b + (g1 + 0.5 * d as f64 * sigma_norm.sqrt() * g2) * terms.c
}

/// Inputs of the non-smooth bound besides the class constant and `C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonsmoothInputs {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub sigma_norm: f64,
    /// `sum_i E|W_i|`.
    pub sum_mean_abs_w: f64,
    /// Bound on the pair increments, `2/sqrt(n)`.
    pub delta_a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonsmoothBound {
    pub t: f64,
    pub value: f64,
}

/// `C [log(1/t) A_1 + (log(1/t) ||Sigma||^{1/2} + 1) A_2
///   + (1 + log(1/t) sum E|W_i| + a) A^3 A_3 + a A]` with `sqrt(t) = 2 C A^3 A_3`.
pub fn bound_nonsmooth(inputs: &NonsmoothInputs, a: f64, c_knob: f64) -> Result<NonsmoothBound> {
    if !(a >= 1.0) || !(c_knob > 0.0) {
        return Err(Error::InvalidParams(format!("need a >= 1 and C > 0, got a = {a}, C = {c_knob}")));
    }
    let cube = inputs.delta_a.powi(3);
    let t = (2.0 * c_knob * cube * inputs.a3).powi(2);
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::SmoothingOutOfRange(t));
    }
    let log_inv = -t.ln();
    let value = c_knob
        * (log_inv * inputs.a1
            + (log_inv * inputs.sigma_norm.sqrt() + 1.0) * inputs.a2
            + (1.0 + log_inv * inputs.sum_mean_abs_w + a) * cube * inputs.a3
            + a * inputs.delta_a);
    Ok(NonsmoothBound { t, value })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Dimension constant of the non-smooth bound.
    pub c_knob: f64,
    /// Smoothing constant of the test class.
    pub class_a: f64,
    pub g_norms: [f64; 3],
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { c_knob: 1.0, class_a: (2.0 / std::f64::consts::PI).sqrt(), g_norms: [1.0; 3] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermErrors {
    pub term_a: f64,
    pub term_b: f64,
    pub term_c: f64,
    pub term_a1: f64,
    pub term_a2: f64,
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteinReport {
    pub mode: Mode,
    pub params: ModelParams,
    pub n_states: usize,
    pub seeds: Option<Vec<u64>>,
    #[serde(with = "matrix_rows")]
    pub sigma_hat: DMatrix<f64>,
    pub sigma_norm: f64,
    pub mean_w: Vec<f64>,
    pub mean_abs_w: Vec<f64>,
    #[serde(with = "matrix_rows")]
    pub lambda_matrix: DMatrix<f64>,
    pub lambda_i: Vec<f64>,
    pub term_a: f64,
    pub term_b: f64,
    pub term_c: f64,
    /// A and C with the inner expectations conditioned on `W` (exact mode only).
    pub term_a_given_w: Option<f64>,
    pub term_c_given_w: Option<f64>,
    pub g_norms: [f64; 3],
    pub bound_smooth: f64,
    pub term_a1: f64,
    pub term_a2: f64,
    pub term_a3: f64,
    pub delta_a: f64,
    pub c_knob: f64,
    pub class_a: f64,
    /// `max(class_a, 1)`, the value entering the non-smooth bound.
    pub a_used: f64,
    pub t: Option<f64>,
    pub bound_nonsmooth: Option<f64>,
    pub nonsmooth_error: Option<String>,
    pub regression_residual: f64,
    pub max_abs_r1: f64,
    pub r1_bound: f64,
    pub max_r2_taylor_gap: f64,
    pub standard_errors: Option<TermErrors>,
}

/// Per-state statistics for all `2^n` configurations together with their
/// Gibbs probabilities and projected integer overlap sums.
pub struct ExactStates {
    pub stats: Vec<StateStats>,
    pub probs: Vec<f64>,
    pub keys: Vec<Vec<i64>>,
}

pub fn exact_states(xi: &PatternSet, params: &ModelParams, reg: &RegressionObjects) -> Result<ExactStates> {
    if params.n > STEIN_ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge { n: params.n, limit: STEIN_ENUMERATION_LIMIT });
    }
    let probs = gibbs_probabilities(xi, params)?;
    let n = params.n;
    let pairs = for_each_state(xi, |bits, sums| {
        let sigma: Vec<i8> = (0..n).map(|i| if bits >> i & 1 == 1 { 1 } else { -1 }).collect();
        (reg.state_stats(&sigma, sums, xi), sums[..params.k].to_vec())
    });
    let (stats, keys) = pairs.into_iter().unzip();
    Ok(ExactStates { stats, probs, keys })
}

/// A and C with inner expectations conditioned on `W` instead of `sigma`.
fn terms_given_w(ex: &ExactStates, reg: &RegressionObjects) -> (f64, f64) {
    let k = reg.k;
    let mut groups: BTreeMap<&[i64], (f64, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((s, &p), key) in ex.stats.iter().zip(&ex.probs).zip(&ex.keys) {
        let g = groups.entry(key.as_slice()).or_insert_with(|| (0.0, vec![0.0; k * k], vec![0.0; k]));
        g.0 += p;
        g.1.iter_mut().zip(&s.inner2).for_each(|(a, b)| *a += p * b);
        g.2.iter_mut().zip(&s.r).for_each(|(a, b)| *a += p * b);
    }
    let grouped: Vec<(f64, Vec<f64>, Vec<f64>)> = groups
        .into_values()
        .filter(|g| g.0 > 0.0)
        .map(|(w, i2, r)| (w, i2.into_iter().map(|v| v / w).collect(), r.into_iter().map(|v| v / w).collect()))
        .collect();
    let mut a = 0.0;
    let mut c = 0.0;
    for i in 0..k {
        for j in 0..k {
            a += reg.lambda_i[i] * weighted_var(grouped.iter().map(|g| (g.1[i * k + j], g.0))).max(0.0).sqrt();
        }
        c += reg.lambda_i[i] * weighted_var(grouped.iter().map(|g| (g.2[i], g.0))).max(0.0).sqrt();
    }
    (a, c)
}

fn assemble(
    mode: Mode,
    params: &ModelParams,
    reg: &RegressionObjects,
    stats: &[StateStats],
    weights: &[f64],
    opts: &ReportOptions,
) -> SteinReport {
    let m = moments(stats, weights, reg);
    let sigma_norm = symmetric_operator_norm(&m.sigma);
    let nf = params.n as f64;
    let delta_a = 2.0 / nf.sqrt();
    let a3 = reg.a3();
    let a_used = opts.class_a.max(1.0);
    let inputs = NonsmoothInputs {
        a1: m.terms.a1,
        a2: m.terms.a2,
        a3,
        sigma_norm,
        sum_mean_abs_w: m.mean_abs_w.iter().sum(),
        delta_a,
    };
    let (t, bound_nonsmooth, nonsmooth_error) = match bound_nonsmooth(&inputs, a_used, opts.c_knob) {
        Ok(b) => (Some(b.t), Some(b.value), None),
        Err(e) => (None, None, Some(e.to_string())),
    };
    let fold = |f: &dyn Fn(&StateStats) -> f64| stats.iter().map(f).fold(0.0_f64, f64::max);
    SteinReport {
        mode,
        params: *params,
        n_states: stats.len(),
        seeds: None,
        sigma_hat: m.sigma,
        sigma_norm,
        mean_w: m.mean_w,
        mean_abs_w: m.mean_abs_w,
        lambda_matrix: reg.lambda_matrix.clone(),
        lambda_i: reg.lambda_i.clone(),
        term_a: m.terms.a,
        term_b: m.terms.b,
        term_c: m.terms.c,
        term_a_given_w: None,
        term_c_given_w: None,
        g_norms: opts.g_norms,
        bound_smooth: bound_smooth(&m.terms, sigma_norm, reg.k, opts.g_norms),
        term_a1: m.terms.a1,
        term_a2: m.terms.a2,
        term_a3: a3,
        delta_a,
        c_knob: opts.c_knob,
        class_a: opts.class_a,
        a_used,
        t,
        bound_nonsmooth,
        nonsmooth_error,
        regression_residual: fold(&|s| s.residual),
        max_abs_r1: fold(&|s| s.r1.iter().fold(0.0_f64, |a, v| a.max(v.abs()))),
        r1_bound: params.beta * params.p as f64 / (nf * nf.sqrt()),
        max_r2_taylor_gap: fold(&|s| s.r2.iter().zip(&s.r2_taylor).fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()))),
        standard_errors: None,
    }
}

/// Stein report with every expectation computed over the exact Gibbs law.
pub fn stein_report_exact(
    xi: &PatternSet,
    params: &ModelParams,
    centering: &CenteringResult,
    opts: &ReportOptions,
) -> Result<SteinReport> {
    let reg = build_regression(xi, params, centering)?;
    let ex = exact_states(xi, params, &reg)?;
    let mut report = assemble(Mode::Exact, params, &reg, &ex.stats, &ex.probs, opts);
    let (a_w, c_w) = terms_given_w(&ex, &reg);
    report.term_a_given_w = Some(a_w);
    report.term_c_given_w = Some(c_w);
    Ok(report)
}

/// Stein report from Glauber draws; inner expectations are exact per draw and
/// standard errors come from contiguous batch means.
pub fn stein_report_mc(
    xi: &PatternSet,
    params: &ModelParams,
    centering: &CenteringResult,
    chain: &ChainConfig,
    opts: &ReportOptions,
) -> Result<SteinReport> {
    if chain.n_samples < MIN_MC_DRAWS {
        return Err(Error::TooFewDraws { got: chain.n_samples, need: MIN_MC_DRAWS });
    }
    let reg = build_regression(xi, params, centering)?;
    let out = run_chains_with(xi, params, centering, chain, |view| reg.state_stats(view.sigma, view.sums, xi))?;
    let mut report = stein_report_from_stats(params, &reg, &out.probes, opts)?;
    report.seeds = Some(out.chain_seeds);
    Ok(report)
}

/// Monte Carlo report from already computed per-draw statistics.
pub fn stein_report_from_stats(
    params: &ModelParams,
    reg: &RegressionObjects,
    stats: &[StateStats],
    opts: &ReportOptions,
) -> Result<SteinReport> {
    if stats.len() < MIN_MC_DRAWS {
        return Err(Error::TooFewDraws { got: stats.len(), need: MIN_MC_DRAWS });
    }
    let weights = vec![1.0 / stats.len() as f64; stats.len()];
    let mut report = assemble(Mode::MonteCarlo, params, reg, stats, &weights, opts);
    report.standard_errors = Some(batch_errors(stats, reg));
    Ok(report)
}

fn batch_errors(stats: &[StateStats], reg: &RegressionObjects) -> TermErrors {
    let nb = SE_BATCHES.min(stats.len() / 5).max(2);
    let size = stats.len() / nb;
    let per: Vec<Terms> = (0..nb)
        .map(|b| {
            let chunk = &stats[b * size..(b + 1) * size];
            terms_from_states(chunk, &vec![1.0 / size as f64; size], reg)
        })
        .collect();
    let se = |f: fn(&Terms) -> f64| {
        let vals: Vec<f64> = per.iter().map(f).collect();
        let mean = vals.iter().sum::<f64>() / nb as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nb - 1) as f64;
        (var / nb as f64).sqrt()
    };
    TermErrors {
        term_a: se(|t| t.a),
        term_b: se(|t| t.b),
        term_c: se(|t| t.c),
        term_a1: se(|t| t.a1),
        term_a2: se(|t| t.a2),
        batches: nb,
    }
}
