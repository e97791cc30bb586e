//! Distances between the law of `W` and its Gaussian limit, the
//! Hubbard-Stratonovich density check, and log-log rate fits.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf_inv;

use crate::error::{Error, Result};
use crate::free_energy::{CenteringResult, RowGroups};
use crate::linalg::{min_eigenvalue, sqrt_psd};
use crate::model::{ModelParams, PatternSet};
use crate::sampling::SampleBatch;

/// Target absolute error of one-dimensional Gaussian integrals.
pub const QUADRATURE_TOL: f64 = 1e-12;
/// Contiguous batches used for Monte Carlo standard errors.
pub const SE_BATCHES: usize = 20;
const QMC_REPLICATES: u32 = 16;
const QMC_POINTS: u32 = 4096;

/// Sup-norms of the first three derivatives of `tanh` and `tanh^2`.
pub const TANH_DERIV_SUP: [f64; 3] = [1.0, 0.769_800_358_919_501, 2.0];
pub fn tanh_sq_deriv_sup() -> [f64; 3] {
    // |16T - 40T^3 + 24T^5| peaks at T^2 = (120 - sqrt 6720) / 240
    let t = ((120.0 - 6720f64.sqrt()) / 240.0).sqrt();
    [TANH_DERIV_SUP[1], 2.0, 16.0 * t - 40.0 * t.powi(3) + 24.0 * t.powi(5)]
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

pub fn normal_quantile(u: f64) -> f64 {
    SQRT_2 * erf_inv(2.0 * u - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// `c1 tanh(s) + c2 tanh(s)^2`, `s = <a, x> + b`; parameters `[c1, c2, b, a_1..a_k]`.
    SmoothPolyTanh,
    /// `1{x <= c}`; parameters `[c]`.
    HalflineIndicator,
    /// `1{lo <= x <= hi}`; parameters `[lo, hi]`.
    IntervalIndicator,
    /// `1{<u, x> <= c}` with unit `u`; parameters `[c, u_1..u_k]`.
    HalfspaceIndicator,
    /// `prod_i 1{lo_i <= x_i <= hi_i}`; parameters `[lo_1, hi_1, ..., lo_k, hi_k]`.
    BoxIndicator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub id: String,
    pub kind: TestKind,
    pub parameters: Vec<f64>,
    pub dim: usize,
    pub g_norms: Option<[f64; 3]>,
    pub a_constant: Option<f64>,
}

impl TestFunction {
    pub fn smooth(id: impl Into<String>, c1: f64, c2: f64, b: f64, a: &[f64]) -> Self {
        let amax = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let u = tanh_sq_deriv_sup();
        let norms = [0, 1, 2].map(|r| amax.powi(r as i32 + 1) * (c1.abs() * TANH_DERIV_SUP[r] + c2.abs() * u[r]));
        let mut parameters = vec![c1, c2, b];
        parameters.extend_from_slice(a);
        Self { id: id.into(), kind: TestKind::SmoothPolyTanh, parameters, dim: a.len(), g_norms: Some(norms), a_constant: None }
    }

    pub fn halfline(c: f64) -> Self {
        Self {
            id: format!("halfline_{c}"),
            kind: TestKind::HalflineIndicator,
            parameters: vec![c],
            dim: 1,
            g_norms: None,
            a_constant: Some((2.0 / PI).sqrt()),
        }
    }

    pub fn interval(lo: f64, hi: f64) -> Self {
        Self {
            id: format!("interval_{lo}_{hi}"),
            kind: TestKind::IntervalIndicator,
            parameters: vec![lo, hi],
            dim: 1,
            g_norms: None,
            a_constant: Some(2.0 * (2.0 / PI).sqrt()),
        }
    }

    pub fn halfspace(id: impl Into<String>, c: f64, u: &[f64]) -> Self {
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut parameters = vec![c];
        parameters.extend(u.iter().map(|v| v / norm));
        Self {
            id: id.into(),
            kind: TestKind::HalfspaceIndicator,
            parameters,
            dim: u.len(),
            g_norms: None,
            a_constant: Some((2.0 / PI).sqrt()),
        }
    }

    pub fn boxed(id: impl Into<String>, bounds: &[(f64, f64)]) -> Self {
        let k = bounds.len();
        Self {
            id: id.into(),
            kind: TestKind::BoxIndicator,
            parameters: bounds.iter().flat_map(|&(lo, hi)| [lo, hi]).collect(),
            dim: k,
            g_norms: None,
            a_constant: Some(2.0 * k as f64 * (2.0 / PI).sqrt()),
        }
    }

    pub fn is_smooth(&self) -> bool {
        self.kind == TestKind::SmoothPolyTanh
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let p = &self.parameters;
        let ind = |b: bool| f64::from(u8::from(b));
        match self.kind {
            TestKind::SmoothPolyTanh => {
                let s = p[2] + p[3..].iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
                let t = s.tanh();
                p[0] * t + p[1] * t * t
            }
            TestKind::HalflineIndicator => ind(x[0] <= p[0]),
            TestKind::IntervalIndicator => ind(p[0] <= x[0] && x[0] <= p[1]),
            TestKind::HalfspaceIndicator => ind(p[1..].iter().zip(x).map(|(u, v)| u * v).sum::<f64>() <= p[0]),
            TestKind::BoxIndicator => ind(x.iter().enumerate().all(|(i, &v)| p[2 * i] <= v && v <= p[2 * i + 1])),
        }
    }

    /// The enlarged and shrunken sets `(g_delta^+, g_delta^-)` of an indicator;
    /// `None` for smooth members. An emptied set is returned as an empty interval or box.
    pub fn smoothed_pair(&self, delta: f64) -> Option<(TestFunction, TestFunction)> {
        let p = &self.parameters;
        let mut plus = self.clone();
        let mut minus = self.clone();
        match self.kind {
            TestKind::SmoothPolyTanh => return None,
            TestKind::HalflineIndicator | TestKind::HalfspaceIndicator => {
                plus.parameters[0] = p[0] + delta;
                minus.parameters[0] = p[0] - delta;
            }
            TestKind::IntervalIndicator | TestKind::BoxIndicator => {
                for i in 0..self.dim {
                    plus.parameters[2 * i] = p[2 * i] - delta;
                    plus.parameters[2 * i + 1] = p[2 * i + 1] + delta;
                    minus.parameters[2 * i] = p[2 * i] + delta;
                    minus.parameters[2 * i + 1] = p[2 * i + 1] - delta;
                }
            }
        }
        plus.id = format!("{}+{delta}", self.id);
        minus.id = format!("{}-{delta}", self.id);
        Some((plus, minus))
    }
}

/// Bundled smooth test functions on `R^k`.
pub fn smooth_family(k: usize) -> Vec<TestFunction> {
    let mut out = Vec::new();
    let mut directions: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    if k > 1 {
        directions.push(vec![1.0 / (k as f64).sqrt(); k]);
    }
    for (d, dir) in directions.iter().enumerate() {
        for scale in [0.5, 1.0] {
            let a: Vec<f64> = dir.iter().map(|v| v * scale).collect();
            for (c1, c2, b) in [(1.0, 0.0, 0.0), (1.0, 0.0, 0.5), (0.0, 1.0, 0.0), (0.5, 0.5, -0.3)] {
                out.push(TestFunction::smooth(format!("tanh_d{d}_a{scale}_c{c1}_{c2}_b{b}"), c1, c2, b, &a));
            }
        }
    }
    out
}

/// Bundled non-smooth test functions of class G on `R^k`.
pub fn gclass_family(k: usize) -> Vec<TestFunction> {
    if k == 1 {
        let mut out: Vec<TestFunction> = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0].into_iter().map(TestFunction::halfline).collect();
        for (lo, hi) in [(-1.0, 1.0), (-0.5, 0.5), (-2.0, 0.0), (0.0, 2.0), (-2.0, 2.0)] {
            out.push(TestFunction::interval(lo, hi));
        }
        return out;
    }
    let mut out = Vec::new();
    for i in 0..k {
        let u: Vec<f64> = (0..k).map(|j| f64::from(u8::from(i == j))).collect();
        for c in [-1.0, 0.0, 1.0] {
            out.push(TestFunction::halfspace(format!("halfspace_e{i}_{c}"), c, &u));
        }
    }
    for c in [-1.0, 0.0, 1.0] {
        out.push(TestFunction::halfspace(format!("halfspace_diag_{c}"), c, &vec![1.0; k]));
    }
    for c in [0.5, 1.0, 2.0] {
        out.push(TestFunction::boxed(format!("box_{c}"), &vec![(-c, c); k]));
    }
    out.push(TestFunction::boxed("box_quadrant", &vec![(0.0, 8.0); k]));
    out
}

/// A value with a standard error (zero for exact quantities).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// `int f dN(mean, var)` by double-exponential quadrature over `mean +- 12 sd`.
pub fn gaussian_integral_1d(f: impl Fn(f64) -> f64, mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return f(mean);
    }
    let sd = var.sqrt();
    let dens = |z: f64| (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
    quadrature::double_exponential::integrate(|z| f(mean + sd * z) * dens(z), -12.0, 12.0, QUADRATURE_TOL).integral
}

/// `E g(Sigma^{1/2} Z)` for standard normal `Z`. Exact for half-lines,
/// intervals and half-spaces, quadrature for smooth members and randomized
/// quasi-Monte Carlo (with standard error) for boxes in two or more dimensions.
pub fn gaussian_expectation(g: &TestFunction, sigma_half: &DMatrix<f64>, quadrature_seed: u64) -> Result<Estimate> {
    let k = sigma_half.nrows();
    if sigma_half.ncols() != k || g.dim != k {
        return Err(Error::DimensionMismatch { expected: k, found: g.dim });
    }
    let sym_gap = (sigma_half - sigma_half.transpose()).abs().max();
    if sym_gap > 1e-12 || (k > 0 && min_eigenvalue(sigma_half) < -1e-12) {
        return Err(Error::NotPsd(min_eigenvalue(sigma_half)));
    }
    let p = &g.parameters;
    // variance of <u, Sigma^{1/2} Z>
    let proj_var = |u: &[f64]| {
        let v = sigma_half * nalgebra::DVector::from_column_slice(u);
        v.norm_squared()
    };
    let exact = |value| Ok(Estimate { value, se: 0.0 });
    let cdf = |c: f64, var: f64| {
        if var > 0.0 {
            normal_cdf(c / var.sqrt())
        } else {
            f64::from(u8::from(c >= 0.0))
        }
    };
    match g.kind {
        TestKind::SmoothPolyTanh => {
            let var = proj_var(&p[3..]);
            let (c1, c2) = (p[0], p[1]);
            exact(gaussian_integral_1d(|s| { let t = s.tanh(); c1 * t + c2 * t * t }, p[2], var))
        }
        TestKind::HalflineIndicator => exact(cdf(p[0], sigma_half[(0, 0)].powi(2))),
        TestKind::IntervalIndicator => {
            let var = sigma_half[(0, 0)].powi(2);
            exact((cdf(p[1], var) - cdf(p[0], var)).max(0.0))
        }
        TestKind::HalfspaceIndicator => exact(cdf(p[0], proj_var(&p[1..]))),
        TestKind::BoxIndicator => {
            if k == 1 {
                let var = sigma_half[(0, 0)].powi(2);
                return exact((cdf(p[1], var) - cdf(p[0], var)).max(0.0));
            }
            Ok(qmc_expectation(g, sigma_half, quadrature_seed))
        }
    }
}

fn qmc_expectation(g: &TestFunction, sigma_half: &DMatrix<f64>, seed: u64) -> Estimate {
    let k = sigma_half.nrows();
    let base = (seed ^ seed >> 32) as u32;
    let mut z = nalgebra::DVector::zeros(k);
    let reps: Vec<f64> = (0..QMC_REPLICATES)
        .map(|r| {
            let scramble = base.wrapping_add(r.wrapping_mul(0x9E37_79B9));
            let mut acc = 0.0;
            for i in 0..QMC_POINTS {
                for d in 0..k {
                    let u = sobol_burley::sample(i, d as u32, scramble) as f64 + 0.5 / (1u64 << 24) as f64;
                    z[d] = normal_quantile(u);
                }
                let x = sigma_half * &z;
                acc += g.eval(x.as_slice());
            }
            acc / QMC_POINTS as f64
        })
        .collect();
    let m = reps.iter().sum::<f64>() / reps.len() as f64;
    let var = reps.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (reps.len() - 1) as f64;
    Estimate { value: m, se: (var / reps.len() as f64).sqrt() }
}

/// Standard error of the mean of a correlated sequence from contiguous batch means.
pub fn batch_mean_se(values: &[f64]) -> f64 {
    let nb = SE_BATCHES.min(values.len() / 2).max(1);
    if nb < 2 {
        return f64::NAN;
    }
    let size = values.len() / nb;
    let means: Vec<f64> = (0..nb).map(|b| values[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let m = means.iter().sum::<f64>() / nb as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (nb - 1) as f64;
    (var / nb as f64).sqrt()
}

/// Distance of one test function between the batch law and `N(0, Sigma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub g_id: String,
    pub empirical: f64,
    pub gaussian: f64,
    pub distance: f64,
    pub se: f64,
    /// Monte Carlo distance below two standard errors.
    pub noise_dominated: bool,
}

/// `|E g(W) - E g(Sigma^{1/2} Z)|` with `Sigma = sigma_hat`; exact in enumeration mode.
pub fn distance(batch: &SampleBatch, g: &TestFunction, sigma_hat: &DMatrix<f64>, quadrature_seed: u64) -> Result<DistanceEstimate> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let half = sqrt_psd(sigma_hat)?;
    distance_with_half(batch, g, &half, quadrature_seed, None)
}

fn distance_with_half(
    batch: &SampleBatch,
    g: &TestFunction,
    half: &DMatrix<f64>,
    seed: u64,
    controls: Option<&[Vec<f64>]>,
) -> Result<DistanceEstimate> {
    let gauss = gaussian_expectation(g, half, seed)?;
    let (empirical, emp_se) = match (&batch.weights, controls) {
        (Some(w), _) => (batch.rows().zip(w).map(|(r, p)| p * g.eval(r)).sum::<f64>(), 0.0),
        (None, Some(c)) => {
            let vals: Vec<f64> = batch.rows().map(|r| g.eval(r)).collect();
            let est = control_variate_mean(&vals, c);
            (est.value, est.se)
        }
        (None, None) => {
            let vals: Vec<f64> = batch.rows().map(|r| g.eval(r)).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            (m, batch_mean_se(&vals))
        }
    };
    let distance = (empirical - gauss.value).abs();
    let se = (emp_se * emp_se + gauss.se * gauss.se).sqrt();
    Ok(DistanceEstimate {
        g_id: g.id.clone(),
        empirical,
        gaussian: gauss.value,
        distance,
        se,
        noise_dominated: se > 0.0 && distance < 2.0 * se,
    })
}

/// Mean of `values` adjusted by zero-mean control variates (one row of `controls`
/// per draw), with least-squares coefficients and a batch-means standard error.
pub fn control_variate_mean(values: &[f64], controls: &[Vec<f64>]) -> Estimate {
    let n = values.len();
    let m = controls.first().map_or(0, Vec::len);
    let mean = |v: &mut dyn Iterator<Item = f64>| v.sum::<f64>() / n as f64;
    let gm = mean(&mut values.iter().copied());
    let cm: Vec<f64> = (0..m).map(|j| mean(&mut controls.iter().map(|c| c[j]))).collect();
    let mut xtx: DMatrix<f64> = DMatrix::zeros(m, m);
    let mut xty: nalgebra::DVector<f64> = nalgebra::DVector::zeros(m);
    for (v, c) in values.iter().zip(controls) {
        for a in 0..m {
            xty[a] += (c[a] - cm[a]) * (v - gm);
            for b in 0..m {
                xtx[(a, b)] += (c[a] - cm[a]) * (c[b] - cm[b]);
            }
        }
    }
    // controls may be collinear (e.g. p = 1 with a single coordinate): use the pseudo-inverse
    let coef: nalgebra::DVector<f64> = xtx.pseudo_inverse(1e-12).map(|inv| inv * xty).unwrap_or_else(|_| nalgebra::DVector::zeros(m));
    let adjusted: Vec<f64> = values
        .iter()
        .zip(controls)
        .map(|(v, c)| v - (0..m).map(|a| coef[a] * c[a]).sum::<f64>())
        .collect();
    Estimate { value: adjusted.iter().sum::<f64>() / n as f64, se: batch_mean_se(&adjusted) }
}

/// Family-level distance: the supremum over members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyDistance {
    pub distance: f64,
    pub se: f64,
    pub argmax: String,
    pub noise_dominated: bool,
    pub members: Vec<DistanceEstimate>,
}

///
/// `controls`, when given, holds one row of zero-mean control variates per draw
/// of a Monte Carlo batch; the empirical means are then variance-reduced.
pub fn family_distance(
    batch: &SampleBatch,
    family: &[TestFunction],
    sigma_hat: &DMatrix<f64>,
    quadrature_seed: u64,
    controls: Option<&[Vec<f64>]>,
) -> Result<FamilyDistance> {
    if family.is_empty() {
        return Err(Error::InvalidParams("empty test family".into()));
    }
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let half = sqrt_psd(sigma_hat)?;
    let members = family
        .iter()
        .map(|g| distance_with_half(batch, g, &half, quadrature_seed, controls))
        .collect::<Result<Vec<_>>>()?;
    let best = members.iter().max_by(|a, b| a.distance.total_cmp(&b.distance)).expect("nonempty");
    Ok(FamilyDistance {
        distance: best.distance,
        se: best.se,
        argmax: best.g_id.clone(),
        noise_dominated: best.noise_dominated,
        members: members.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub n_values: Vec<usize>,
    pub distances: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least squares of `log distance` on `log n`.
pub fn fit_rate(n_values: &[usize], distances: &[f64]) -> Result<RateFit> {
    if n_values.len() != distances.len() {
        return Err(Error::DimensionMismatch { expected: n_values.len(), found: distances.len() });
    }
    if n_values.len() < 4 || n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::TooFewPoints { got: n_values.len(), need: 4 });
    }
    if let Some(&d) = distances.iter().find(|d| !(**d > 0.0)) {
        return Err(Error::NonPositiveDistance(d));
    }
    let xs: Vec<f64> = n_values.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = distances.iter().map(|d| d.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit { n_values: n_values.to_vec(), distances: distances.to_vec(), slope, intercept, r_squared })
}

/// Goodness of fit of `V + W` against the density proportional to
/// `exp(n Phi(lambda + beta z / sqrt n))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsReport {
    pub p: usize,
    pub n_draws: usize,
    pub v_seed: u64,
    /// Kolmogorov distance per axis (a single entry for p = 1).
    pub cdf_distance: Vec<f64>,
    pub max_cdf_distance: f64,
    pub grid_half_width: f64,
    pub grid_points: usize,
    /// Diagonal of `(beta^2 C)^{-1}` with `C = -D^2 Phi(lambda)`.
    pub laplace_variance: Vec<f64>,
    pub sample_variance: Vec<f64>,
    pub density_variance: Vec<f64>,
}

const HS_GRID_1D: usize = 8001;
const HS_GRID_2D: usize = 601;
const HS_MAX_WIDEN: usize = 4;
const HS_EDGE_TOL: f64 = 1e-12;

/// Draws `V ~ N(0, Id/beta)` independent of the batch, forms `V + W` and compares
/// its law with the normalized density on a grid of half-width eight Laplace
/// standard deviations (doubled when mass reaches the edge). Supports p = 1 and p = 2.
pub fn hubbard_stratonovich_check(
    xi: &PatternSet,
    params: &ModelParams,
    centering: &CenteringResult,
    batch: &SampleBatch,
    v_seed: u64,
) -> Result<HsReport> {
    let p = params.p;
    if batch.k != p || params.k != p {
        return Err(Error::InvalidParams("the density check needs unprojected W (k = p)".into()));
    }
    if !(params.beta > 0.0) {
        return Err(Error::InvalidParams("the density check needs beta > 0".into()));
    }
    if p > 2 {
        return Err(Error::InvalidParams(format!("density check implemented for p <= 2, got {p}")));
    }
    if batch.is_exact() || batch.is_empty() {
        return Err(Error::InvalidParams("the density check needs Monte Carlo draws".into()));
    }
    let groups = RowGroups::new(xi);
    let neg_h = -groups.hessian(&centering.lambda, params);
    let laplace_cov = neg_h
        .clone()
        .try_inverse()
        .ok_or(Error::SingularLambda { min_abs_eig: min_eigenvalue(&neg_h) })?
        / (params.beta * params.beta);
    let laplace_variance: Vec<f64> = (0..p).map(|i| laplace_cov[(i, i)]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(v_seed);
    let v_sd = 1.0 / params.beta.sqrt();
    let y: Vec<Vec<f64>> = batch
        .rows()
        .map(|r| r.iter().map(|w| w + v_sd * { let z: f64 = StandardNormal.sample(&mut rng); z }).collect::<Vec<f64>>())
        .collect();
    let nd = y.len() as f64;
    let sample_variance: Vec<f64> = (0..p)
        .map(|i| {
            let m = y.iter().map(|v| v[i]).sum::<f64>() / nd;
            y.iter().map(|v| (v[i] - m).powi(2)).sum::<f64>() / (nd - 1.0)
        })
        .collect();

    let nf = params.n as f64;
    let log_density = |z: &[f64]| {
        let mu: Vec<f64> = (0..p).map(|i| centering.lambda[i] + params.beta * z[i] / nf.sqrt()).collect();
        nf * groups.phi(&mu, params)
    };
    let sd_max = laplace_variance.iter().fold(0.0_f64, |a, v| a.max(v.sqrt()));
    let center: Vec<f64> = (0..p).map(|i| y.iter().map(|v| v[i]).sum::<f64>() / nd).collect();
    let mut half_width = 8.0 * sd_max;
    for _ in 0..=HS_MAX_WIDEN {
        let grid = if p == 1 {
            marginal_grid_1d(&log_density, center[0], half_width)
        } else {
            marginal_grids_2d(&log_density, &center, half_width)
        };
        if let Some(marginals) = grid {
            let mut cdf_distance = Vec::with_capacity(p);
            let mut density_variance = Vec::with_capacity(p);
            for (axis, (xs, dens)) in marginals.iter().enumerate() {
                let cdf = cumulative(xs, dens);
                let mut samples: Vec<f64> = y.iter().map(|v| v[axis]).collect();
                samples.sort_by(f64::total_cmp);
                cdf_distance.push(kolmogorov(&samples, xs, &cdf));
                density_variance.push(grid_variance(xs, dens));
            }
            let max_cdf_distance = cdf_distance.iter().copied().fold(0.0, f64::max);
            return Ok(HsReport {
                p,
                n_draws: y.len(),
                v_seed,
                cdf_distance,
                max_cdf_distance,
                grid_half_width: half_width,
                grid_points: if p == 1 { HS_GRID_1D } else { HS_GRID_2D },
                laplace_variance,
                sample_variance,
                density_variance,
            });
        }
        half_width *= 2.0;
    }
    Err(Error::GridNormalization(format!("mass still at the edge of a grid of half-width {half_width}")))
}

type Marginal = (Vec<f64>, Vec<f64>);

fn edges_negligible(values: &[f64], edge: &[usize]) -> bool {
    let max = values.iter().copied().fold(0.0, f64::max);
    max > 0.0 && max.is_finite() && edge.iter().all(|&i| values[i] <= HS_EDGE_TOL * max)
}

fn marginal_grid_1d(log_density: &impl Fn(&[f64]) -> f64, center: f64, half: f64) -> Option<Vec<Marginal>> {
    let m = HS_GRID_1D;
    let xs: Vec<f64> = (0..m).map(|i| center - half + 2.0 * half * i as f64 / (m - 1) as f64).collect();
    let logs: Vec<f64> = xs.iter().map(|&x| log_density(&[x])).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    edges_negligible(&dens, &[0, m - 1]).then(|| vec![(xs, dens)])
}

fn marginal_grids_2d(log_density: &impl Fn(&[f64]) -> f64, center: &[f64], half: f64) -> Option<Vec<Marginal>> {
    let m = HS_GRID_2D;
    let axis = |c: f64| -> Vec<f64> { (0..m).map(|i| c - half + 2.0 * half * i as f64 / (m - 1) as f64).collect() };
    let (xs, ys) = (axis(center[0]), axis(center[1]));
    let mut logs = vec![0.0; m * m];
    for (i, &x) in xs.iter().enumerate() {
        for (j, &y) in ys.iter().enumerate() {
            logs[i * m + j] = log_density(&[x, y]);
        }
    }
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let edge: Vec<usize> = (0..m).flat_map(|i| [i, (m - 1) * m + i, i * m, i * m + m - 1]).collect();
    if !edges_negligible(&dens, &edge) {
        return None;
    }
    let dy = ys[1] - ys[0];
    let dx = xs[1] - xs[0];
    let mx: Vec<f64> = (0..m).map(|i| trapezoid(&dens[i * m..(i + 1) * m], dy)).collect();
    let my: Vec<f64> = (0..m).map(|j| trapezoid(&(0..m).map(|i| dens[i * m + j]).collect::<Vec<_>>(), dx)).collect();
    Some(vec![(xs, mx), (ys, my)])
}

fn trapezoid(v: &[f64], h: f64) -> f64 {
    h * (v.iter().sum::<f64>() - 0.5 * (v[0] + v[v.len() - 1]))
}

/// Normalized cumulative trapezoid integral.
fn cumulative(xs: &[f64], dens: &[f64]) -> Vec<f64> {
    let mut cdf = vec![0.0; xs.len()];
    for i in 1..xs.len() {
        cdf[i] = cdf[i - 1] + 0.5 * (dens[i] + dens[i - 1]) * (xs[i] - xs[i - 1]);
    }
    let total = cdf[cdf.len() - 1];
    cdf.iter_mut().for_each(|c| *c /= total);
    cdf
}

fn grid_variance(xs: &[f64], dens: &[f64]) -> f64 {
    let h = xs[1] - xs[0];
    let z = trapezoid(dens, h);
    let mean = trapezoid(&xs.iter().zip(dens).map(|(x, d)| x * d).collect::<Vec<_>>(), h) / z;
    trapezoid(&xs.iter().zip(dens).map(|(x, d)| (x - mean).powi(2) * d).collect::<Vec<_>>(), h) / z
}

fn interpolate(xs: &[f64], cdf: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return 0.0;
    }
    if x >= xs[xs.len() - 1] {
        return 1.0;
    }
    let h = xs[1] - xs[0];
    let pos = (x - xs[0]) / h;
    let i = (pos.floor() as usize).min(xs.len() - 2);
    let f = pos - i as f64;
    cdf[i] * (1.0 - f) + cdf[i + 1] * f
}

/// Kolmogorov distance between sorted samples and a gridded CDF.
fn kolmogorov(sorted: &[f64], xs: &[f64], cdf: &[f64]) -> f64 {
    let m = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let f = interpolate(xs, cdf, s);
            (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::free_energy::find_lambda_max;
    use crate::sampling::{enumerate_distribution, run_chains, ChainConfig};

    fn eye(k: usize) -> DMatrix<f64> {
        DMatrix::identity(k, k)
    }

    #[test]
    fn standard_normal_expectations() {
        let e = |g: &TestFunction| gaussian_expectation(g, &eye(1), 0).unwrap().value;
        assert!((e(&TestFunction::halfline(0.0)) - 0.5).abs() < 1e-15);
        assert!((e(&TestFunction::interval(-1.0, 1.0)) - 0.682_689_492_137_085_9).abs() < 1e-12);
        let second = gaussian_integral_1d(|x| x * x, 0.0, 2.25);
        assert!((second - 2.25).abs() < 1e-10);
    }

    #[test]
    fn smooth_expectation_uses_projected_variance() {
        let g = TestFunction::smooth("t", 0.0, 1.0, 0.0, &[1.0, 1.0]);
        let half = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let direct = gaussian_integral_1d(|s| s.tanh().powi(2), 0.0, 5.0);
        assert!((gaussian_expectation(&g, &half, 0).unwrap().value - direct).abs() < 1e-12);
    }

    #[test]
    fn qmc_box_matches_product_of_cdfs() {
        let g = TestFunction::boxed("b", &[(-1.0, 1.0), (-0.5, 2.0)]);
        let est = gaussian_expectation(&g, &eye(2), 7).unwrap();
        let exact = (normal_cdf(1.0) - normal_cdf(-1.0)) * (normal_cdf(2.0) - normal_cdf(-0.5));
        assert!((est.value - exact).abs() < 5.0 * est.se + 1e-4, "{} {} {}", est.value, exact, est.se);
        assert!(est.se < 1e-3);
    }

    #[test]
    fn non_psd_root_is_rejected() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(gaussian_expectation(&TestFunction::halfspace("h", 0.0, &[1.0, 0.0]), &bad, 0), Err(Error::NotPsd(_))));
    }

    #[test]
    fn derivative_sups_match_dense_grid() {
        // finite-difference derivatives of tanh and tanh^2 on a dense grid
        let d3 = |f: &dyn Fn(f64) -> f64, x: f64| {
            let h = 1e-3;
            (f(x + 2.0 * h) - 2.0 * f(x + h) + 2.0 * f(x - h) - f(x - 2.0 * h)) / (2.0 * h * h * h)
        };
        let d2 = |f: &dyn Fn(f64) -> f64, x: f64| {
            let h = 1e-4;
            (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
        };
        let sq = |x: f64| x.tanh().powi(2);
        let th = |x: f64| x.tanh();
        let grid: Vec<f64> = (0..=20000).map(|i| -10.0 + i as f64 * 1e-3).collect();
        let sup = |g: &dyn Fn(f64) -> f64| grid.iter().map(|&x| g(x).abs()).fold(0.0, f64::max);
        assert!((sup(&|x| d2(&th, x)) - TANH_DERIV_SUP[1]).abs() < 1e-4);
        assert!((sup(&|x| d3(&th, x)) - TANH_DERIV_SUP[2]).abs() < 1e-4);
        let u = tanh_sq_deriv_sup();
        assert!((sup(&|x| d2(&sq, x)) - u[1]).abs() < 1e-4);
        assert!((sup(&|x| d3(&sq, x)) - u[2]).abs() < 1e-4, "{}", sup(&|x| d3(&sq, x)));
    }

    #[test]
    fn families_are_well_formed() {
        for k in [1, 2, 3] {
            for g in smooth_family(k) {
                assert!(g.g_norms.unwrap().iter().all(|v| v.is_finite() && *v >= 0.0));
                assert_eq!(g.dim, k);
            }
            for g in gclass_family(k) {
                assert!(g.a_constant.unwrap() > 0.0);
                for x in [-3.0, -0.2, 0.0, 0.7, 5.0] {
                    let v = g.eval(&vec![x; k]);
                    assert!((0.0..=1.0).contains(&v));
                }
            }
        }
        let a1 = gclass_family(1);
        assert!(a1.iter().any(|g| (g.a_constant.unwrap() - (2.0 / PI).sqrt()).abs() < 1e-15));
        assert!(a1.iter().any(|g| (g.a_constant.unwrap() - 2.0 * (2.0 / PI).sqrt()).abs() < 1e-15));
    }

    #[test]
    fn smoothed_halfline_mass_is_controlled() {
        let g = TestFunction::halfline(0.3);
        for delta in [0.01, 0.1, 0.5, 1.0, 3.0] {
            let (plus, minus) = g.smoothed_pair(delta).unwrap();
            assert_eq!(plus.kind, TestKind::HalflineIndicator);
            let mass = gaussian_expectation(&plus, &eye(1), 0).unwrap().value - gaussian_expectation(&minus, &eye(1), 0).unwrap().value;
            assert!(mass <= g.a_constant.unwrap() * delta + 1e-15);
        }
    }

    #[test]
    fn exact_distance_for_two_free_spins() {
        let xi = PatternSet::from_rows(2, 1, vec![1, 1], 0).unwrap();
        let pr = ModelParams::unprojected(2, 1, 0.0, 0.0).unwrap();
        let batch = enumerate_distribution(&xi, &pr, &CenteringResult::at_origin(1)).unwrap();
        let d = distance(&batch, &TestFunction::halfline(0.0), &eye(1), 0).unwrap();
        // P(W <= 0) = 3/4 against 1/2
        assert!((d.distance - 0.25).abs() < 1e-15);
        assert!(!d.noise_dominated);
    }

    #[test]
    fn rate_fit_on_synthetic_curves() {
        let ns: Vec<usize> = (3..=12).map(|e| 1usize << e).collect();
        let pow: Vec<f64> = ns.iter().map(|&n| 0.7 / (n as f64).sqrt()).collect();
        let fit = fit_rate(&ns, &pow).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12 && (fit.r_squared - 1.0).abs() < 1e-12);
        let logged: Vec<f64> = ns.iter().map(|&n| (n as f64).ln() / (n as f64).sqrt()).collect();
        // local slope 1/ln n - 1/2 lies in [1/ln 4096 - 1/2, 1/ln 8 - 1/2]
        let s = fit_rate(&ns, &logged).unwrap().slope;
        assert!(s > 1.0 / 4096f64.ln() - 0.5 && s < 1.0 / 8f64.ln() - 0.5, "{s}");
        assert!(fit_rate(&ns, &vec![0.2; ns.len()]).unwrap().slope.abs() < 1e-12);
        assert!(matches!(fit_rate(&ns[..3], &pow[..3]), Err(Error::TooFewPoints { .. })));
        let mut bad = pow.clone();
        bad[2] = 0.0;
        assert!(matches!(fit_rate(&ns, &bad), Err(Error::NonPositiveDistance(_))));
    }

    #[test]
    fn density_check_on_small_chain() {
        let xi = PatternSet::generate(100, 1, 3).unwrap();
        let pr = ModelParams::unprojected(100, 1, 1.5, 0.2).unwrap();
        let c = find_lambda_max(&xi, &pr).unwrap();
        let cfg = ChainConfig { n_samples: 20_000, seed: 1, ..Default::default() };
        let batch = run_chains(&xi, &pr, &c, &cfg).unwrap().batch;
        let rep = hubbard_stratonovich_check(&xi, &pr, &c, &batch, 2).unwrap();
        assert!(rep.max_cdf_distance < 0.03, "{}", rep.max_cdf_distance);
        let rel = (rep.sample_variance[0] - rep.laplace_variance[0]).abs() / rep.laplace_variance[0];
        assert!(rel < 0.1, "{rel}");
    }

    #[test]
    fn distance_ignores_row_order() {
        let xi = PatternSet::generate(40, 1, 3).unwrap();
        let pr = ModelParams::unprojected(40, 1, 0.5, 0.0).unwrap();
        let c = find_lambda_max(&xi, &pr).unwrap();
        let mut batch = run_chains(&xi, &pr, &c, &ChainConfig { n_samples: 1000, seed: 4, ..Default::default() }).unwrap().batch;
        let g = TestFunction::smooth("g", 1.0, 0.5, 0.1, &[1.0]);
        let d1 = distance(&batch, &g, &eye(1), 0).unwrap().distance;
        batch.w.reverse();
        let d2 = distance(&batch, &g, &eye(1), 0).unwrap().distance;
        assert!((d1 - d2).abs() < 1e-13);
    }
}
