//! Quenched free energy `Phi`, Curie-Weiss fixed points and the random
//! centering obtained by maximizing `Phi`.
//!
//! `Phi(lambda) = -(1/2 beta) ||lambda - h e_l||^2 + (1/n) sum_j log cosh <lambda, xi_j>`.
//! Its maximizer `lambda` inside a small ball around `arctanh(x*) e_l` defines the
//! centering `x = (lambda - h e_l) / beta` of the rescaled overlap.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{euclidean_norm, matrix_rows, min_eigenvalue, symmetric_operator_norm};
use crate::model::{ModelParams, PatternSet};

/// Trust-region radius around the Newton start, in lambda-space.
pub const TRUST_RADIUS: f64 = 0.5;
pub const MAX_NEWTON_ITERS: usize = 100;
pub const GRAD_TOL: f64 = 1e-10;
const FIXED_POINT_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Zero,
    Positive,
    Negative,
    Field,
}

/// Solution of `beta x + h = arctanh(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointResult {
    pub x_star: f64,
    /// `arctanh(x_star)`, the root in the arctanh variable.
    pub arctanh_x_star: f64,
    pub branch: Branch,
    /// `|beta tanh(y) + h - y|` at the returned root `y = arctanh(x_star)`.
    pub residual: f64,
}

impl FixedPointResult {
    /// The mirrored solution `x^-(beta) = -x^+(beta)` of the field-free equation.
    pub fn mirrored(&self) -> Self {
        let branch = match self.branch {
            Branch::Positive => Branch::Negative,
            Branch::Negative => Branch::Positive,
            b => b,
        };
        Self { x_star: -self.x_star, arctanh_x_star: -self.arctanh_x_star, branch, ..*self }
    }
}

/// `arctanh` as `0.5 log((1+x)/(1-x))` with the argument clamped to `|x| <= 1 - 1e-15`.
pub fn arctanh(x: f64) -> f64 {
    let x = x.clamp(-1.0 + 1e-15, 1.0 - 1e-15);
    0.5 * ((1.0 + x) / (1.0 - x)).ln()
}

/// Overflow-safe `log cosh z = |z| + log(1 + exp(-2|z|)) - log 2`.
pub fn log_cosh(z: f64) -> f64 {
    let a = z.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// `cosh^-2 z` without cancellation for large `|z|`.
pub fn sech2(z: f64) -> f64 {
    let e = (-2.0 * z.abs()).exp();
    4.0 * e / ((1.0 + e) * (1.0 + e))
}

/// Curie-Weiss magnetization `x*`: the largest root of `beta x = arctanh(x)` for
/// `h = 0`, or the root with the sign of `h` of `beta x + h = arctanh(x)`.
///
/// The root is bracketed and bisected in `y = arctanh(x)`, where the equation reads
/// `beta tanh(y) + h = y`; this keeps the residual at rounding level even when
/// `x*` is within 1e-10 of one.
pub fn curie_weiss_fixed_point(beta: f64, h: f64) -> Result<FixedPointResult> {
    if !(beta.is_finite() && beta >= 0.0 && h.is_finite() && h >= 0.0) {
        return Err(Error::InvalidParams(format!("beta = {beta}, h = {h}")));
    }
    if beta == 1.0 && h == 0.0 {
        return Err(Error::CriticalPoint);
    }
    if h == 0.0 && beta < 1.0 {
        return Ok(FixedPointResult { x_star: 0.0, arctanh_x_star: 0.0, branch: Branch::Zero, residual: 0.0 });
    }
    let f = |y: f64| beta * y.tanh() + h - y;
    let (mut lo, mut hi) = (if h == 0.0 { 1e-12 } else { 0.0 }, beta + h + 1.0);
    for _ in 0..FIXED_POINT_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let y = if f(lo).abs() <= f(hi).abs() { lo } else { hi };
    Ok(FixedPointResult {
        x_star: y.tanh(),
        arctanh_x_star: y,
        branch: if h == 0.0 { Branch::Positive } else { Branch::Field },
        residual: f(y).abs(),
    })
}

/// Distinct pattern rows with multiplicities; `Phi` and its derivatives only
/// depend on the empirical distribution of the rows.
#[derive(Debug, Clone)]
pub(crate) struct RowGroups {
    rows: Vec<Vec<f64>>,
    weights: Vec<f64>,
    p: usize,
}

impl RowGroups {
    pub(crate) fn new(xi: &PatternSet) -> Self {
        let mut index: HashMap<&[i8], usize> = HashMap::new();
        let mut order: Vec<&[i8]> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for i in 0..xi.n() {
            let row = xi.row(i);
            match index.get(row) {
                Some(&g) => counts[g] += 1,
                None => {
                    index.insert(row, order.len());
                    order.push(row);
                    counts.push(1);
                }
            }
        }
        let n = xi.n() as f64;
        Self {
            rows: order.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect(),
            weights: counts.iter().map(|&c| c as f64 / n).collect(),
            p: xi.p(),
        }
    }

    fn projections(&self, lambda: &[f64]) -> impl Iterator<Item = (&[f64], f64, f64)> + '_ {
        let lambda = lambda.to_vec();
        self.rows.iter().zip(&self.weights).map(move |(row, &w)| {
            let z = row.iter().zip(&lambda).map(|(a, b)| a * b).sum::<f64>();
            (row.as_slice(), w, z)
        })
    }

    pub(crate) fn phi(&self, lambda: &[f64], params: &ModelParams) -> f64 {
        let field = params.field_vector();
        let quad: f64 = lambda.iter().zip(&field).map(|(a, b)| (a - b) * (a - b)).sum();
        let lc: f64 = self.projections(lambda).map(|(_, w, z)| w * log_cosh(z)).sum();
        -quad / (2.0 * params.beta) + lc
    }

    /// `(1/n) sum_j xi_j tanh <lambda, xi_j>`.
    pub(crate) fn tanh_mean(&self, lambda: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        for (row, w, z) in self.projections(lambda) {
            let t = w * z.tanh();
            for (o, r) in out.iter_mut().zip(row) {
                *o += t * r;
            }
        }
        out
    }

    pub(crate) fn gradient(&self, lambda: &[f64], params: &ModelParams) -> Vec<f64> {
        let field = params.field_vector();
        self.tanh_mean(lambda)
            .into_iter()
            .zip(lambda.iter().zip(&field))
            .map(|(t, (l, f))| t - (l - f) / params.beta)
            .collect()
    }

    /// `(1/n) sum_j sech^2 <lambda, xi_j> xi_j xi_j^t`.
    pub(crate) fn sech2_moment(&self, lambda: &[f64]) -> DMatrix<f64> {
        let p = self.p;
        let mut m = DMatrix::zeros(p, p);
        for (row, w, z) in self.projections(lambda) {
            let s = w * sech2(z);
            for a in 0..p {
                for b in 0..p {
                    m[(a, b)] += s * row[a] * row[b];
                }
            }
        }
        m
    }

    pub(crate) fn hessian(&self, lambda: &[f64], params: &ModelParams) -> DMatrix<f64> {
        let mut m = self.sech2_moment(lambda);
        for a in 0..self.p {
            m[(a, a)] -= 1.0 / params.beta;
        }
        m
    }

    /// Third derivatives `(1/n) sum_j (-2 sech^2 tanh)(z_j) xi_j^a xi_j^b xi_j^c`, flattened `a*p*p + b*p + c`.
    pub(crate) fn third_derivative(&self, lambda: &[f64]) -> Vec<f64> {
        let p = self.p;
        let mut t = vec![0.0; p * p * p];
        for (row, w, z) in self.projections(lambda) {
            let s = -2.0 * w * sech2(z) * z.tanh();
            for a in 0..p {
                for b in 0..p {
                    for c in 0..p {
                        t[(a * p + b) * p + c] += s * row[a] * row[b] * row[c];
                    }
                }
            }
        }
        t
    }
}

fn check_lambda(lambda: &[f64], xi: &PatternSet, params: &ModelParams) -> Result<()> {
    if lambda.len() != xi.p() {
        return Err(Error::DimensionMismatch { expected: xi.p(), found: lambda.len() });
    }
    if params.p != xi.p() || params.n != xi.n() {
        return Err(Error::DimensionMismatch { expected: xi.p(), found: params.p });
    }
    if !(params.beta > 0.0) {
        return Err(Error::InvalidParams("Phi requires beta > 0".into()));
    }
    Ok(())
}

/// Quenched free energy `Phi(lambda)`.
pub fn phi(lambda: &[f64], xi: &PatternSet, params: &ModelParams) -> Result<f64> {
    check_lambda(lambda, xi, params)?;
    Ok(RowGroups::new(xi).phi(lambda, params))
}

/// `dPhi/dlambda_i = -(lambda_i - h delta_{i,l}) / beta + (1/n) sum_j tanh(<lambda, xi_j>) xi_j^i`.
pub fn phi_gradient(lambda: &[f64], xi: &PatternSet, params: &ModelParams) -> Result<Vec<f64>> {
    check_lambda(lambda, xi, params)?;
    Ok(RowGroups::new(xi).gradient(lambda, params))
}

/// `D^2 Phi = -(1/beta) Id + (1/n) sum_j sech^2(<lambda, xi_j>) xi_j xi_j^t`.
pub fn phi_hessian(lambda: &[f64], xi: &PatternSet, params: &ModelParams) -> Result<DMatrix<f64>> {
    check_lambda(lambda, xi, params)?;
    Ok(RowGroups::new(xi).hessian(lambda, params))
}

/// Maximizer of `Phi` and the centering it induces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteringResult {
    pub lambda: Vec<f64>,
    pub x_center: Vec<f64>,
    #[serde(with = "matrix_rows")]
    pub hessian_at_max: DMatrix<f64>,
    pub min_eig_neg_hessian: f64,
    pub grad_norm: f64,
    pub fallback_used: bool,
    pub iterations: usize,
    pub x_star: f64,
}

impl CenteringResult {
    /// A hand-specified centering with `lambda = x = 0` and no Hessian information,
    /// used where `Phi` is not defined (beta = 0) and the center is known.
    pub fn at_origin(p: usize) -> Self {
        Self {
            lambda: vec![0.0; p],
            x_center: vec![0.0; p],
            hessian_at_max: DMatrix::zeros(p, p),
            min_eig_neg_hessian: 0.0,
            grad_norm: 0.0,
            fallback_used: false,
            iterations: 0,
            x_star: 0.0,
        }
    }

    /// `C = -D^2 Phi(lambda)`.
    pub fn neg_hessian(&self) -> DMatrix<f64> {
        -&self.hessian_at_max
    }
}

fn project_to_ball(center: &[f64], point: &mut [f64], radius: f64) {
    let diff: Vec<f64> = point.iter().zip(center).map(|(a, b)| a - b).collect();
    let d = euclidean_norm(&diff);
    if d > radius {
        for ((pt, c), df) in point.iter_mut().zip(center).zip(&diff) {
            *pt = c + df * radius / d;
        }
    }
}

fn centering_at(
    groups: &RowGroups,
    lambda: Vec<f64>,
    params: &ModelParams,
    x_star: f64,
    fallback_used: bool,
    iterations: usize,
) -> CenteringResult {
    let hessian = groups.hessian(&lambda, params);
    let grad_norm = euclidean_norm(&groups.gradient(&lambda, params));
    let field = params.field_vector();
    let x_center = if fallback_used {
        params.unit_direction().into_iter().map(|e| e * x_star).collect()
    } else {
        lambda.iter().zip(&field).map(|(l, f)| (l - f) / params.beta).collect()
    };
    CenteringResult {
        min_eig_neg_hessian: min_eigenvalue(&-&hessian),
        hessian_at_max: hessian,
        grad_norm,
        fallback_used,
        iterations,
        x_star,
        x_center,
        lambda,
    }
}

/// Damped Newton ascent on `Phi`, started at `arctanh(x*) e_l` and confined to the
/// ball of radius [`TRUST_RADIUS`] around the start.
///
/// Converges when the gradient norm drops below [`GRAD_TOL`] with `-D^2 Phi`
/// positive definite. Otherwise the centering falls back to `x* e_l`.
///
/// At `beta = 0`, where `Phi` is undefined, returns the `beta -> 0` limit of the
/// maximizer: `lambda = h e_l` and `x = (1/n) sum_j xi_j tanh(h xi_j^l)`, the
/// free-spin mean overlap. The Hessian fields are then zero.
pub fn find_lambda_max(xi: &PatternSet, params: &ModelParams) -> Result<CenteringResult> {
    params.ensure_noncritical()?;
    let fp = curie_weiss_fixed_point(params.beta, params.h)?;
    if params.beta == 0.0 {
        if params.p != xi.p() || params.n != xi.n() {
            return Err(Error::DimensionMismatch { expected: xi.p(), found: params.p });
        }
        let lambda = params.field_vector();
        let x_center = RowGroups::new(xi).tanh_mean(&lambda);
        return Ok(CenteringResult { lambda, x_center, x_star: fp.x_star, ..CenteringResult::at_origin(params.p) });
    }
    let start: Vec<f64> = params.unit_direction().into_iter().map(|e| e * fp.arctanh_x_star).collect();
    check_lambda(&start, xi, params)?;
    let groups = RowGroups::new(xi);

    let mut lambda = start.clone();
    let mut value = groups.phi(&lambda, params);
    for iter in 0..MAX_NEWTON_ITERS {
        let grad = groups.gradient(&lambda, params);
        let neg_h = -groups.hessian(&lambda, params);
        let curvature = min_eigenvalue(&neg_h);
        if euclidean_norm(&grad) <= GRAD_TOL && curvature > 0.0 {
            return Ok(centering_at(&groups, lambda, params, fp.x_star, false, iter));
        }
        let g = DVector::from_vec(grad.clone());
        let direction: Vec<f64> = match (curvature > 0.0).then(|| neg_h.clone().cholesky()).flatten() {
            Some(chol) => chol.solve(&g).iter().copied().collect(),
            None => {
                let norm = euclidean_norm(&grad);
                if norm == 0.0 {
                    break;
                }
                grad.iter().map(|v| v * TRUST_RADIUS.min(norm) / norm).collect()
            }
        };

        let mut step = 1.0;
        let mut moved = false;
        while step > 1e-12 {
            let mut cand: Vec<f64> = lambda.iter().zip(&direction).map(|(l, d)| l + step * d).collect();
            project_to_ball(&start, &mut cand, TRUST_RADIUS);
            let cand_value = groups.phi(&cand, params);
            let slack = 1e-15 * value.abs().max(1.0);
            if cand_value >= value - slack && cand != lambda {
                lambda = cand;
                value = cand_value;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }

    let grad_norm = euclidean_norm(&groups.gradient(&lambda, params));
    let curvature = min_eigenvalue(&-groups.hessian(&lambda, params));
    if grad_norm <= GRAD_TOL && curvature > 0.0 {
        return Ok(centering_at(&groups, lambda, params, fp.x_star, false, MAX_NEWTON_ITERS));
    }
    Ok(centering_at(&groups, start, params, fp.x_star, true, MAX_NEWTON_ITERS))
}

/// `|| C - (1/beta)(1 - beta (1 - x*^2)) Id ||` with `C = -D^2 Phi(lambda)` at the maximizer.
pub fn hessian_deviation(xi: &PatternSet, params: &ModelParams, centering: &CenteringResult) -> Result<f64> {
    check_lambda(&centering.lambda, xi, params)?;
    let fp = curie_weiss_fixed_point(params.beta, params.h)?;
    let c = -RowGroups::new(xi).hessian(&centering.lambda, params);
    let target = (1.0 - params.beta * (1.0 - fp.x_star * fp.x_star)) / params.beta;
    let dev = c - DMatrix::identity(params.p, params.p) * target;
    Ok(symmetric_operator_norm(&dev))
}

/// Directions favored by the overlap under the equilibrium measure.
pub fn index_set_l(params: &ModelParams) -> Result<Vec<i64>> {
    params.ensure_noncritical()?;
    let p = params.p as i64;
    Ok(if params.h != 0.0 {
        vec![params.l]
    } else if params.beta < 1.0 {
        vec![1]
    } else {
        (-p..=p).filter(|&v| v != 0).collect()
    })
}
