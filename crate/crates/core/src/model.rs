//! Static objects of the Hopfield model: parameters, patterns, spin
//! configurations, the Hamiltonian, overlaps, local fields and Gibbs weights.
//!
//! Sites are indexed from zero. A direction index `l` is signed: the field
//! vector is `e_l = sgn(l) e_{|l|}` and `xi_i^l = sgn(l) xi_i^{|l|}`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_operator_norm;

/// Model dimensions and thermodynamic parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Number of neurons.
    pub n: usize,
    /// Number of stored patterns.
    pub p: usize,
    /// Inverse temperature.
    pub beta: f64,
    /// External field strength.
    pub h: f64,
    /// Signed field/centering direction, `1 <= |l| <= p`.
    pub l: i64,
    /// Number of overlap coordinates kept in `W`.
    pub k: usize,
}

impl ModelParams {
    pub fn new(n: usize, p: usize, beta: f64, h: f64, l: i64, k: usize) -> Result<Self> {
        let params = Self { n, p, beta, h, l, k };
        params.validate()?;
        Ok(params)
    }

    /// Convenience constructor with `l = 1` and `k = p`.
    pub fn unprojected(n: usize, p: usize, beta: f64, h: f64) -> Result<Self> {
        Self::new(n, p, beta, h, 1, p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.n == 0 || self.p == 0 {
            return bad(format!("n and p must be positive (n = {}, p = {})", self.n, self.p));
        }
        if self.p > self.n {
            return bad(format!("p = {} exceeds n = {}", self.p, self.n));
        }
        if self.k == 0 || self.k > self.p {
            return bad(format!("k = {} must lie in 1..={}", self.k, self.p));
        }
        if self.l == 0 || self.l.unsigned_abs() as usize > self.p {
            return bad(format!("l = {} must be nonzero with |l| <= {}", self.l, self.p));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad(format!("beta = {} must be finite and nonnegative", self.beta));
        }
        if !(self.h.is_finite() && self.h >= 0.0) {
            return bad(format!("h = {} must be finite and nonnegative", self.h));
        }
        Ok(())
    }

    pub fn is_critical(&self) -> bool {
        self.beta == 1.0 && self.h == 0.0
    }

    pub fn ensure_noncritical(&self) -> Result<()> {
        if self.is_critical() {
            Err(Error::CriticalPoint)
        } else {
            Ok(())
        }
    }

    /// Zero-based pattern index `|l| - 1`.
    pub fn direction(&self) -> usize {
        self.l.unsigned_abs() as usize - 1
    }

    pub fn direction_sign(&self) -> f64 {
        self.l.signum() as f64
    }

    /// Signed unit vector `e_l` in R^p.
    pub fn unit_direction(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.p];
        e[self.direction()] = self.direction_sign();
        e
    }

    /// The field vector `h e_l`.
    pub fn field_vector(&self) -> Vec<f64> {
        self.unit_direction().into_iter().map(|v| v * self.h).collect()
    }

    pub fn with_direction(&self, l: i64) -> Result<Self> {
        Self::new(self.n, self.p, self.beta, self.h, l, self.k)
    }

    pub fn with_n(&self, n: usize) -> Result<Self> {
        Self::new(n, self.p, self.beta, self.h, self.l, self.k)
    }
}

/// The `n x p` matrix of +-1 pattern entries, stored row-major (one row per neuron).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternSet {
    n: usize,
    p: usize,
    entries: Vec<i8>,
    seed: u64,
}

impl PatternSet {
    /// Independent fair +-1 entries drawn from a ChaCha8 stream seeded with `seed`,
    /// filled row by row.
    pub fn generate(n: usize, p: usize, seed: u64) -> Result<Self> {
        if n == 0 || p == 0 || p > n {
            return Err(Error::InvalidParams(format!(
                "pattern shape n = {n}, p = {p} requires 1 <= p <= n"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..n * p)
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect();
        Ok(Self { n, p, entries, seed })
    }

    pub fn for_params(params: &ModelParams, seed: u64) -> Result<Self> {
        Self::generate(params.n, params.p, seed)
    }

    /// Builds a pattern set from explicit row-major entries.
    pub fn from_rows(n: usize, p: usize, entries: Vec<i8>, seed: u64) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::InvalidParams("empty pattern set".into()));
        }
        if entries.len() != n * p {
            return Err(Error::DimensionMismatch { expected: n * p, found: entries.len() });
        }
        if let Some(bad) = entries.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::Parse(format!("pattern entry {bad} is not +-1")));
        }
        Ok(Self { n, p, entries, seed })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entries(&self) -> &[i8] {
        &self.entries
    }

    /// The pattern vector `xi_i` of neuron `i` (length p).
    pub fn row(&self, i: usize) -> &[i8] {
        &self.entries[i * self.p..(i + 1) * self.p]
    }

    pub fn get(&self, i: usize, mu: usize) -> i8 {
        self.entries[i * self.p + mu]
    }

    pub fn column(&self, mu: usize) -> Vec<i8> {
        (0..self.n).map(|i| self.get(i, mu)).collect()
    }

    /// `xi_i^l` for a signed direction index.
    pub fn signed_entry(&self, i: usize, l: i64) -> f64 {
        l.signum() as f64 * self.get(i, l.unsigned_abs() as usize - 1) as f64
    }

    fn check_params(&self, params: &ModelParams) -> Result<()> {
        if params.n != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, found: params.n });
        }
        if params.p != self.p {
            return Err(Error::DimensionMismatch { expected: self.p, found: params.p });
        }
        Ok(())
    }
}

/// A configuration of n Ising spins.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfig {
    sigma: Vec<i8>,
}

impl SpinConfig {
    pub fn new(sigma: Vec<i8>) -> Result<Self> {
        if sigma.is_empty() {
            return Err(Error::InvalidParams("empty spin configuration".into()));
        }
        if let Some(bad) = sigma.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::Parse(format!("spin value {bad} is not +-1")));
        }
        Ok(Self { sigma })
    }

    pub fn all_up(n: usize) -> Self {
        Self { sigma: vec![1; n] }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        Self { sigma: (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect() }
    }

    /// Configuration aligned with the signed pattern `sgn(l) xi^{|l|}`.
    pub fn aligned(xi: &PatternSet, l: i64) -> Self {
        let sign = l.signum() as i8;
        Self { sigma: xi.column(l.unsigned_abs() as usize - 1).into_iter().map(|v| v * sign).collect() }
    }

    /// Configuration whose bits (LSB = site 0) set to 1 mean spin +1.
    pub fn from_bits(bits: u64, n: usize) -> Self {
        Self { sigma: (0..n).map(|i| if bits >> i & 1 == 1 { 1 } else { -1 }).collect() }
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn spins(&self) -> &[i8] {
        &self.sigma
    }

    pub fn get(&self, i: usize) -> i8 {
        self.sigma[i]
    }

    pub fn flipped(&self) -> Self {
        Self { sigma: self.sigma.iter().map(|s| -s).collect() }
    }

    pub fn with_spin(&self, i: usize, value: i8) -> Self {
        let mut sigma = self.sigma.clone();
        sigma[i] = value;
        Self { sigma }
    }

    pub(crate) fn into_inner(self) -> Vec<i8> {
        self.sigma
    }

    pub(crate) fn from_raw(sigma: Vec<i8>) -> Self {
        Self { sigma }
    }
}

fn check_dims(sigma: &SpinConfig, xi: &PatternSet) -> Result<()> {
    if sigma.len() != xi.n() {
        return Err(Error::DimensionMismatch { expected: xi.n(), found: sigma.len() });
    }
    Ok(())
}

/// Integer overlap sums `S_n = sum_i xi_i sigma_i` (length p).
pub fn overlap_sums(sigma: &SpinConfig, xi: &PatternSet) -> Result<Vec<i64>> {
    check_dims(sigma, xi)?;
    Ok(overlap_sums_unchecked(sigma.spins(), xi))
}

pub(crate) fn overlap_sums_unchecked(sigma: &[i8], xi: &PatternSet) -> Vec<i64> {
    let mut s = vec![0i64; xi.p()];
    for (i, &si) in sigma.iter().enumerate() {
        for (acc, &x) in s.iter_mut().zip(xi.row(i)) {
            *acc += (x * si) as i64;
        }
    }
    s
}

/// The overlap vector `S_n / n`.
pub fn overlap(sigma: &SpinConfig, xi: &PatternSet) -> Result<Vec<f64>> {
    let n = xi.n() as f64;
    Ok(overlap_sums(sigma, xi)?.into_iter().map(|s| s as f64 / n).collect())
}

/// Hopfield Hamiltonian `-(1/2n) sum_mu sum_{i,j} xi_i^mu xi_j^mu sigma_i sigma_j`,
/// evaluated as `-(1/2n) ||S_n||^2` with exact integer sums.
pub fn hamiltonian(sigma: &SpinConfig, xi: &PatternSet) -> Result<f64> {
    let s = overlap_sums(sigma, xi)?;
    let sq: i64 = s.iter().map(|v| v * v).sum();
    Ok(-(sq as f64) / (2.0 * xi.n() as f64))
}

/// Local field `m_i` (or `m_i^i` with the self-interaction removed).
pub fn local_field(i: usize, sigma: &SpinConfig, xi: &PatternSet, exclude_self: bool) -> Result<f64> {
    check_dims(sigma, xi)?;
    if i >= xi.n() {
        return Err(Error::IndexOutOfRange { index: i, len: xi.n() });
    }
    let s = overlap_sums_unchecked(sigma.spins(), xi);
    Ok(local_field_from_sums(i, sigma.get(i), &s, xi, exclude_self))
}

/// `n * m_i` as an exact integer.
#[inline]
pub(crate) fn scaled_local_field(i: usize, sigma_i: i8, sums: &[i64], xi: &PatternSet, exclude_self: bool) -> i64 {
    let full: i64 = xi.row(i).iter().zip(sums).map(|(&x, &s)| x as i64 * s).sum();
    if exclude_self {
        full - xi.p() as i64 * sigma_i as i64
    } else {
        full
    }
}

#[inline]
pub(crate) fn local_field_from_sums(i: usize, sigma_i: i8, sums: &[i64], xi: &PatternSet, exclude_self: bool) -> f64 {
    scaled_local_field(i, sigma_i, sums, xi, exclude_self) as f64 / xi.n() as f64
}

/// Law of a single spin given all the others.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinLaw {
    pub p_plus: f64,
    pub p_minus: f64,
    /// Effective field `beta m_i^i + h xi_i^l`.
    pub field: f64,
}

impl SpinLaw {
    pub fn from_field(field: f64) -> Self {
        Self { p_plus: logistic(2.0 * field), p_minus: logistic(-2.0 * field), field }
    }

    /// Conditional mean `tanh(field)`.
    pub fn mean(&self) -> f64 {
        self.field.tanh()
    }

    pub fn prob(&self, t: i8) -> f64 {
        if t > 0 {
            self.p_plus
        } else {
            self.p_minus
        }
    }
}

#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Effective field on site `i` given the integer sums of the current state.
#[inline]
pub(crate) fn effective_field(i: usize, sigma_i: i8, sums: &[i64], xi: &PatternSet, params: &ModelParams) -> f64 {
    params.beta * local_field_from_sums(i, sigma_i, sums, xi, true) + params.h * xi.signed_entry(i, params.l)
}

/// Conditional law of `sigma_i` given `(sigma_j)_{j != i}` under the Gibbs measure.
pub fn conditional_spin_distribution(
    i: usize,
    sigma: &SpinConfig,
    xi: &PatternSet,
    params: &ModelParams,
) -> Result<SpinLaw> {
    xi.check_params(params)?;
    check_dims(sigma, xi)?;
    if i >= xi.n() {
        return Err(Error::IndexOutOfRange { index: i, len: xi.n() });
    }
    let s = overlap_sums_unchecked(sigma.spins(), xi);
    Ok(SpinLaw::from_field(effective_field(i, sigma.get(i), &s, xi, params)))
}

/// Unnormalized log Gibbs weight `-beta H_n + <S_n, h e_l>`.
pub fn log_gibbs_weight(sigma: &SpinConfig, xi: &PatternSet, params: &ModelParams) -> Result<f64> {
    xi.check_params(params)?;
    let s = overlap_sums(sigma, xi)?;
    Ok(log_weight_from_sums(&s, params))
}

#[inline]
pub(crate) fn log_weight_from_sums(sums: &[i64], params: &ModelParams) -> f64 {
    let sq: i64 = sums.iter().map(|v| v * v).sum();
    let field = params.h * params.direction_sign() * sums[params.direction()] as f64;
    params.beta * sq as f64 / (2.0 * params.n as f64) + field
}

/// Deviation of the empirical pattern covariance from the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternCovarianceReport {
    /// Operator norm of `(1/n) sum_i xi_i xi_i^t - Id`.
    pub deviation_norm: f64,
    pub epsilon_n: f64,
    pub alpha: f64,
    pub bound_holds: bool,
}

/// `(1/n) sum_i xi_i xi_i^t - Id` as a dense p x p matrix.
pub fn pattern_covariance_deviation(xi: &PatternSet) -> DMatrix<f64> {
    let p = xi.p();
    let mut counts = vec![0i64; p * p];
    for i in 0..xi.n() {
        let row = xi.row(i);
        for a in 0..p {
            for b in 0..p {
                counts[a * p + b] += (row[a] * row[b]) as i64;
            }
        }
    }
    let n = xi.n() as f64;
    DMatrix::from_fn(p, p, |a, b| {
        let v = counts[a * p + b] as f64 / n;
        if a == b {
            v - 1.0
        } else {
            v
        }
    })
}

/// `alpha = (1/n) max{p, (3 log n / log(1 + eps))^4}` and
/// `eps_n = sqrt(alpha) (2 + sqrt(alpha)) (1 + eps)`.
pub fn epsilon_n(n: usize, p: usize, epsilon: f64) -> (f64, f64) {
    let nf = n as f64;
    let log_term = (3.0 * nf.ln() / epsilon.ln_1p()).powi(4);
    let alpha = (p as f64).max(log_term) / nf;
    let sa = alpha.sqrt();
    (alpha, sa * (2.0 + sa) * (1.0 + epsilon))
}

pub fn pattern_covariance_report(xi: &PatternSet, epsilon: f64) -> Result<PatternCovarianceReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParams(format!("epsilon = {epsilon} must be positive")));
    }
    let deviation_norm = symmetric_operator_norm(&pattern_covariance_deviation(xi));
    let (alpha, eps_n) = epsilon_n(xi.n(), xi.p(), epsilon);
    Ok(PatternCovarianceReport {
        deviation_norm,
        epsilon_n: eps_n,
        alpha,
        bound_holds: deviation_norm <= eps_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize, p: usize, beta: f64, h: f64) -> ModelParams {
        ModelParams::unprojected(n, p, beta, h).unwrap()
    }

    #[test]
    fn parameter_validation() {
        assert!(ModelParams::new(4, 5, 1.0, 0.0, 1, 1).is_err());
        assert!(ModelParams::new(4, 2, 1.0, 0.0, 3, 1).is_err());
        assert!(ModelParams::new(4, 2, 1.0, 0.0, 0, 1).is_err());
        assert!(ModelParams::new(4, 2, 1.0, 0.0, -2, 3).is_err());
        assert!(ModelParams::new(4, 2, -1.0, 0.0, 1, 1).is_err());
        assert!(ModelParams::new(4, 2, 1.0, -0.1, 1, 1).is_err());
        let p = ModelParams::new(4, 2, 1.0, 0.0, -2, 1).unwrap();
        assert!(p.is_critical());
        assert!(matches!(p.ensure_noncritical(), Err(Error::CriticalPoint)));
        assert_eq!(p.unit_direction(), vec![0.0, -1.0]);
    }

    #[test]
    fn patterns_are_deterministic_per_seed() {
        let a = PatternSet::generate(4, 2, 7).unwrap();
        let b = PatternSet::generate(4, 2, 7).unwrap();
        let c = PatternSet::generate(4, 2, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.entries(), c.entries());
        assert!(a.entries().iter().all(|&v| v == 1 || v == -1));
    }

    #[test]
    fn pattern_entries_are_balanced() {
        let xi = PatternSet::generate(10_000, 1, 12345).unwrap();
        let mean = xi.entries().iter().map(|&v| v as f64).sum::<f64>() / 10_000.0;
        assert!(mean.abs() <= 4.0 / 100.0, "mean {mean}");
    }

    #[test]
    fn hamiltonian_full_alignment() {
        let xi = PatternSet::from_rows(4, 1, vec![1; 4], 0).unwrap();
        assert_eq!(hamiltonian(&SpinConfig::all_up(4), &xi).unwrap(), -2.0);
    }

    #[test]
    fn overlap_examples() {
        let xi = PatternSet::from_rows(4, 1, vec![1, 1, -1, -1], 0).unwrap();
        assert_eq!(overlap(&SpinConfig::all_up(4), &xi).unwrap(), vec![0.0]);
        let xi = PatternSet::generate(9, 3, 1).unwrap();
        let s = SpinConfig::aligned(&xi, 1);
        assert_eq!(overlap(&s, &xi).unwrap()[0], 1.0);
        assert_eq!(overlap(&s.flipped(), &xi).unwrap()[0], -1.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let xi = PatternSet::generate(4, 1, 1).unwrap();
        let s = SpinConfig::all_up(5);
        assert!(matches!(hamiltonian(&s, &xi), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(overlap(&s, &xi), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(local_field(9, &SpinConfig::all_up(4), &xi, true), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn local_field_examples() {
        let xi = PatternSet::from_rows(2, 1, vec![1, 1], 0).unwrap();
        let s = SpinConfig::new(vec![1, -1]).unwrap();
        assert_eq!(local_field(0, &s, &xi, true).unwrap(), -0.5);
        let xi = PatternSet::from_rows(6, 1, vec![1, -1, -1, 1, 1, -1], 0).unwrap();
        let s = SpinConfig::aligned(&xi, 1);
        assert_eq!(local_field(0, &s, &xi, false).unwrap(), 1.0);
        assert_eq!(local_field(1, &s, &xi, false).unwrap(), -1.0);
    }

    #[test]
    fn conditional_law_at_zero_field() {
        let xi = PatternSet::from_rows(2, 1, vec![1, 1], 0).unwrap();
        let s = SpinConfig::all_up(2);
        // m_1^1 = 1/2 here, so use beta = 0 for a zero effective field
        let law = conditional_spin_distribution(0, &s, &xi, &params(2, 1, 0.0, 0.0)).unwrap();
        assert_eq!((law.p_plus, law.p_minus), (0.5, 0.5));
    }

    #[test]
    fn negative_direction_flips_field_sign() {
        let xi = PatternSet::generate(5, 2, 11).unwrap();
        assert_eq!(xi.signed_entry(3, -2), -(xi.get(3, 1) as f64));
        let p = ModelParams::new(5, 2, 0.5, 0.4, -2, 2).unwrap();
        let s = SpinConfig::all_up(5);
        let w = log_gibbs_weight(&s, &xi, &p).unwrap();
        let sums = overlap_sums(&s, &xi).unwrap();
        let expected = 0.5 * (sums[0] * sums[0] + sums[1] * sums[1]) as f64 / 10.0 - 0.4 * sums[1] as f64;
        assert!((w - expected).abs() < 1e-14);
    }

    #[test]
    fn covariance_report_examples() {
        let xi = PatternSet::generate(50, 1, 5).unwrap();
        assert_eq!(pattern_covariance_report(&xi, 0.5).unwrap().deviation_norm, 0.0);

        let xi = PatternSet::generate(37, 2, 9).unwrap();
        let c: i64 = (0..37).map(|i| (xi.get(i, 0) * xi.get(i, 1)) as i64).sum();
        let rep = pattern_covariance_report(&xi, 0.5).unwrap();
        assert!((rep.deviation_norm - (c as f64 / 37.0).abs()).abs() < 1e-14);

        let (alpha, eps_n) = epsilon_n(1024, 4, std::f64::consts::E - 1.0);
        assert!((alpha - 182.6).abs() < 0.1, "alpha {alpha}");
        assert!((eps_n - 569.8).abs() < 0.1, "eps_n {eps_n}");
        assert!(pattern_covariance_report(&xi, 0.0).is_err());
    }
}
