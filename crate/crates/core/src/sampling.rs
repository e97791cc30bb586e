//! Drawing from the Gibbs measure: heat-bath Glauber dynamics, exhaustive
//! enumeration, and the single-site resampling pair `(W, W')`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::free_energy::CenteringResult;
use crate::model::{
    effective_field, log_weight_from_sums, logistic, overlap_sums_unchecked, ModelParams, PatternSet, SpinConfig,
};

/// Largest n accepted by [`enumerate_distribution`].
pub const ENUMERATION_LIMIT: usize = 24;
/// Sweep acceptance below which conditioned sampling reports starvation.
pub const STARVATION_THRESHOLD: f64 = 1e-3;
const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Seed of chain `c`: `seed XOR (c + 1) * 0x9E3779B97F4A7C15` (wrapping).
pub fn chain_seed(seed: u64, chain: usize) -> u64 {
    seed ^ (chain as u64 + 1).wrapping_mul(GOLDEN)
}

/// Restriction of the chain to `{ ||S_n/n - center|| < radius }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub burnin_sweeps: usize,
    /// Retained draws summed over all chains.
    pub n_samples: usize,
    pub thin_sweeps: usize,
    pub n_chains: usize,
    pub seed: u64,
    #[serde(default)]
    pub conditioning: Option<Conditioning>,
    #[serde(default)]
    pub record_pairs: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            burnin_sweeps: 100,
            n_samples: 10_000,
            thin_sweeps: 1,
            n_chains: 4,
            seed: 0,
            conditioning: None,
            record_pairs: false,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self, p: usize) -> Result<()> {
        if self.n_samples == 0 || self.thin_sweeps == 0 || self.n_chains == 0 {
            return Err(Error::InvalidParams(
                "n_samples, thin_sweeps and n_chains must be positive".into(),
            ));
        }
        if let Some(c) = &self.conditioning {
            if !(c.radius > 0.0) {
                return Err(Error::InvalidParams(format!("conditioning radius {} must be positive", c.radius)));
            }
            if c.center.len() != p {
                return Err(Error::DimensionMismatch { expected: p, found: c.center.len() });
            }
        }
        Ok(())
    }
}

/// Rescaled projected overlaps `W = sqrt(n) pi_k(S_n/n - x)`, one row per draw or atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub k: usize,
    /// Row-major `len x k` values.
    pub w: Vec<f64>,
    /// Exact probabilities of the atoms in enumeration mode.
    pub weights: Option<Vec<f64>>,
    pub chain: Vec<u32>,
    pub draw: Vec<u64>,
    pub params: ModelParams,
    pub centering: CenteringResult,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.chain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chain.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.w[r * self.k..(r + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.w.chunks_exact(self.k)
    }

    /// Probability of row `r`: the atom weight, or `1/len` for Monte Carlo draws.
    pub fn weight(&self, r: usize) -> f64 {
        match &self.weights {
            Some(w) => w[r],
            None => 1.0 / self.len() as f64,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.weights.is_some()
    }
}

/// One draw of the exchangeable pair built by resampling a uniformly chosen site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    pub w: Vec<f64>,
    pub w_prime: Vec<f64>,
    pub site: usize,
    pub sigma: SpinConfigRepr,
    pub new_spin: i8,
    /// Whether every coordinate satisfies `|w'_i - w_i| <= 2/sqrt(n)`.
    pub delta_bound_ok: bool,
}

/// Spins as a plain `Vec<i8>` for serialization.
pub type SpinConfigRepr = Vec<i8>;

#[inline]
pub(crate) fn w_from_sums(sums: &[i64], n: usize, x_center: &[f64], k: usize) -> Vec<f64> {
    let nf = n as f64;
    let sq = nf.sqrt();
    (0..k).map(|j| sq * (sums[j] as f64 / nf - x_center[j])).collect()
}

/// Mutable chain state with incrementally maintained overlap sums.
pub(crate) struct ChainState<'a> {
    pub(crate) sigma: Vec<i8>,
    pub(crate) sums: Vec<i64>,
    xi: &'a PatternSet,
    params: &'a ModelParams,
}

impl<'a> ChainState<'a> {
    pub(crate) fn new(sigma: Vec<i8>, xi: &'a PatternSet, params: &'a ModelParams) -> Self {
        let sums = overlap_sums_unchecked(&sigma, xi);
        Self { sigma, sums, xi, params }
    }

    #[inline]
    fn set_spin(&mut self, i: usize, value: i8) {
        let old = self.sigma[i];
        if old != value {
            let delta = (value - old) as i64;
            for (s, &x) in self.sums.iter_mut().zip(self.xi.row(i)) {
                *s += delta * x as i64;
            }
            self.sigma[i] = value;
        }
    }

    #[inline]
    fn heat_bath<R: Rng + ?Sized>(&mut self, i: usize, rng: &mut R) {
        let field = effective_field(i, self.sigma[i], &self.sums, self.xi, self.params);
        let up = rng.random::<f64>() < logistic(2.0 * field);
        self.set_spin(i, if up { 1 } else { -1 });
    }

    fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.sigma.len();
        for _ in 0..n {
            let i = rng.random_range(0..n);
            self.heat_bath(i, rng);
        }
    }

    fn overlap_distance(&self, center: &[f64]) -> f64 {
        let n = self.sigma.len() as f64;
        self.sums
            .iter()
            .zip(center)
            .map(|(&s, c)| (s as f64 / n - c).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

pub(crate) fn check_inputs(xi: &PatternSet, params: &ModelParams) -> Result<()> {
    params.validate()?;
    if params.n != xi.n() || params.p != xi.p() {
        return Err(Error::DimensionMismatch { expected: xi.n(), found: params.n });
    }
    Ok(())
}

pub(crate) fn check_centering(params: &ModelParams, centering: &CenteringResult) -> Result<()> {
    if centering.x_center.len() != params.p {
        return Err(Error::DimensionMismatch { expected: params.p, found: centering.x_center.len() });
    }
    Ok(())
}

/// One sweep of `n` heat-bath updates at uniformly chosen sites.
pub fn glauber_sweep<R: Rng + ?Sized>(
    sigma: &SpinConfig,
    xi: &PatternSet,
    params: &ModelParams,
    rng: &mut R,
) -> Result<SpinConfig> {
    check_inputs(xi, params)?;
    if sigma.len() != xi.n() {
        return Err(Error::DimensionMismatch { expected: xi.n(), found: sigma.len() });
    }
    let mut state = ChainState::new(sigma.spins().to_vec(), xi, params);
    state.sweep(rng);
    Ok(SpinConfig::from_raw(state.sigma))
}

/// Normalized Gibbs probabilities of all `2^n` configurations, indexed by the bit
/// pattern of [`SpinConfig::from_bits`].
pub fn gibbs_probabilities(xi: &PatternSet, params: &ModelParams) -> Result<Vec<f64>> {
    check_inputs(xi, params)?;
    if params.n > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge { n: params.n, limit: ENUMERATION_LIMIT });
    }
    let log_w: Vec<f64> = for_each_state(xi, |_, sums| log_weight_from_sums(sums, params));
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|v| *v /= total);
    Ok(probs)
}

/// Visits every configuration in bit order and collects `f(bits, sums)`.
pub(crate) fn for_each_state<T>(xi: &PatternSet, mut f: impl FnMut(u64, &[i64]) -> T) -> Vec<T> {
    let n = xi.n();
    let total = 1u64 << n;
    let mut out = Vec::with_capacity(total as usize);
    // start from all spins down, walk in Gray-code order, store by bit pattern
    let mut sums: Vec<i64> = (0..xi.p()).map(|mu| -(0..n).map(|i| xi.get(i, mu) as i64).sum::<i64>()).collect();
    let mut slots: Vec<Option<T>> = (0..total).map(|_| None).collect();
    let mut gray = 0u64;
    slots[0] = Some(f(0, &sums));
    for step in 1..total {
        let site = step.trailing_zeros() as usize;
        gray ^= 1 << site;
        let up = gray >> site & 1 == 1;
        for (s, &x) in sums.iter_mut().zip(xi.row(site)) {
            *s += if up { 2 * x as i64 } else { -2 * x as i64 };
        }
        slots[gray as usize] = Some(f(gray, &sums));
    }
    out.extend(slots.into_iter().map(|v| v.expect("every state visited")));
    out
}

/// Exact law of `W`: every distinct atom with its Gibbs probability.
pub fn enumerate_distribution(
    xi: &PatternSet,
    params: &ModelParams,
    centering: &CenteringResult,
) -> Result<SampleBatch> {
    check_centering(params, centering)?;
    let probs = gibbs_probabilities(xi, params)?;
    let keys = for_each_state(xi, |_, sums| sums[..params.k].to_vec());
    let mut atoms: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    for (key, p) in keys.into_iter().zip(probs) {
        *atoms.entry(key).or_insert(0.0) += p;
    }
    let mut w = Vec::with_capacity(atoms.len() * params.k);
    let mut weights = Vec::with_capacity(atoms.len());
    for (key, p) in &atoms {
        w.extend(w_from_sums(key, params.n, &centering.x_center, params.k));
        weights.push(*p);
    }
    let len = weights.len();
    Ok(SampleBatch {
        k: params.k,
        w,
        weights: Some(weights),
        chain: vec![0; len],
        draw: (0..len as u64).collect(),
        params: *params,
        centering: centering.clone(),
    })
}

/// Resamples a uniformly chosen site from its conditional law and returns `(W, W')`.
pub fn make_pair<R: Rng + ?Sized>(
    sigma: &SpinConfig,
    xi: &PatternSet,
    params: &ModelParams,
    centering: &CenteringResult,
    rng: &mut R,
) -> Result<PairSample> {
    check_inputs(xi, params)?;
    check_centering(params, centering)?;
    if sigma.len() != xi.n() {
        return Err(Error::DimensionMismatch { expected: xi.n(), found: sigma.len() });
    }
    let sums = overlap_sums_unchecked(sigma.spins(), xi);
    Ok(pair_from_state(sigma.spins(), &sums, xi, params, &centering.x_center, rng))
}

fn pair_from_state<R: Rng + ?Sized>(
    sigma: &[i8],
    sums: &[i64],
    xi: &PatternSet,
    params: &ModelParams,
    x_center: &[f64],
    rng: &mut R,
) -> PairSample {
    let n = params.n;
    let site = rng.random_range(0..n);
    let field = effective_field(site, sigma[site], sums, xi, params);
    let new_spin: i8 = if rng.random::<f64>() < logistic(2.0 * field) { 1 } else { -1 };
    let w = w_from_sums(sums, n, x_center, params.k);
    let scale = 1.0 / (n as f64).sqrt();
    let change = (new_spin - sigma[site]) as f64;
    let w_prime: Vec<f64> = w
        .iter()
        .zip(xi.row(site))
        .map(|(wi, &x)| wi + x as f64 * change * scale)
        .collect();
    let bound = 2.0 * scale * (1.0 + 1e-12);
    let delta_bound_ok = w.iter().zip(&w_prime).all(|(a, b)| (a - b).abs() <= bound);
    PairSample { w, w_prime, site, sigma: sigma.to_vec(), new_spin, delta_bound_ok }
}

/// Read-only view of a chain state handed to per-draw probes.
pub struct StateView<'a> {
    pub sigma: &'a [i8],
    pub sums: &'a [i64],
}

/// Output of [`run_chains_with`].
#[derive(Debug, Clone)]
pub struct ChainOutput<T> {
    pub batch: SampleBatch,
    pub pairs: Vec<PairSample>,
    /// Probe values, in the same order as the batch rows.
    pub probes: Vec<T>,
    pub chain_seeds: Vec<u64>,
    /// Fraction of sweeps accepted under conditioning (1 without conditioning).
    pub acceptance: f64,
}

/// Runs independent chains; see [`run_chains_with`].
pub fn run_chains(
    xi: &PatternSet,
    params: &ModelParams,
    centering: &CenteringResult,
    config: &ChainConfig,
) -> Result<ChainOutput<()>> {
    run_chains_with(xi, params, centering, config, |_| ())
}

struct ChainRun<T> {
    w: Vec<f64>,
    draws: usize,
    pairs: Vec<PairSample>,
    probes: Vec<T>,
    accepted: u64,
    proposed: u64,
}

/// Runs `config.n_chains` independent heat-bath chains (in parallel) and records `W`
/// after burn-in every `thin_sweeps` sweeps, calling `probe` on each retained state.
///
/// Chains start from the configuration aligned with `sgn(l) xi^{|l|}` when the
/// Curie-Weiss magnetization is nonzero and from a uniform random configuration
/// otherwise. Results are merged in chain order, so output depends only on
/// `(xi, params, centering, config)`.
pub fn run_chains_with<T, F>(
    xi: &PatternSet,
    params: &ModelParams,
    centering: &CenteringResult,
    config: &ChainConfig,
    probe: F,
) -> Result<ChainOutput<T>>
where
    T: Send,
    F: Fn(&StateView<'_>) -> T + Sync,
{
    check_inputs(xi, params)?;
    check_centering(params, centering)?;
    config.validate(params.p)?;
    let aligned_start = centering.x_star != 0.0;
    let base = config.n_samples / config.n_chains;
    let extra = config.n_samples % config.n_chains;
    let chain_seeds: Vec<u64> = (0..config.n_chains).map(|c| chain_seed(config.seed, c)).collect();

    let runs: Vec<ChainRun<T>> = chain_seeds
        .par_iter()
        .enumerate()
        .map(|(c, &seed)| {
            let draws = base + usize::from(c < extra);
            run_one_chain(xi, params, centering, config, seed, draws, aligned_start, &probe)
        })
        .collect();

    let accepted: u64 = runs.iter().map(|r| r.accepted).sum();
    let proposed: u64 = runs.iter().map(|r| r.proposed).sum();
    let acceptance = if proposed == 0 { 1.0 } else { accepted as f64 / proposed as f64 };
    if config.conditioning.is_some() && acceptance < STARVATION_THRESHOLD {
        return Err(Error::ConditioningStarvation { acceptance, threshold: STARVATION_THRESHOLD });
    }

    let mut batch = SampleBatch {
        k: params.k,
        w: Vec::with_capacity(config.n_samples * params.k),
        weights: None,
        chain: Vec::with_capacity(config.n_samples),
        draw: Vec::with_capacity(config.n_samples),
        params: *params,
        centering: centering.clone(),
    };
    let mut pairs = Vec::new();
    let mut probes = Vec::with_capacity(config.n_samples);
    for (c, run) in runs.into_iter().enumerate() {
        batch.w.extend(run.w);
        batch.chain.extend(std::iter::repeat_n(c as u32, run.draws));
        batch.draw.extend(0..run.draws as u64);
        pairs.extend(run.pairs);
        probes.extend(run.probes);
    }
    Ok(ChainOutput { batch, pairs, probes, chain_seeds, acceptance })
}

#[allow(clippy::too_many_arguments)]
fn run_one_chain<T, F>(
    xi: &PatternSet,
    params: &ModelParams,
    centering: &CenteringResult,
    config: &ChainConfig,
    seed: u64,
    draws: usize,
    aligned_start: bool,
    probe: &F,
) -> ChainRun<T>
where
    F: Fn(&StateView<'_>) -> T,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = if aligned_start {
        SpinConfig::aligned(xi, params.l).into_inner()
    } else {
        SpinConfig::random(params.n, &mut rng).into_inner()
    };
    let mut state = ChainState::new(start, xi, params);
    let mut run = ChainRun { w: Vec::with_capacity(draws * params.k), draws, pairs: Vec::new(), probes: Vec::with_capacity(draws), accepted: 0, proposed: 0 };

    let advance = |state: &mut ChainState<'_>, rng: &mut ChaCha8Rng, run: &mut ChainRun<T>| match &config.conditioning {
        None => state.sweep(rng),
        Some(cond) => {
            let inside_before = state.overlap_distance(&cond.center) < cond.radius;
            let saved_sigma = state.sigma.clone();
            let saved_sums = state.sums.clone();
            state.sweep(rng);
            // until the chain first enters the ball every sweep is kept
            if inside_before {
                run.proposed += 1;
                if state.overlap_distance(&cond.center) < cond.radius {
                    run.accepted += 1;
                } else {
                    state.sigma = saved_sigma;
                    state.sums = saved_sums;
                }
            }
        }
    };

    for _ in 0..config.burnin_sweeps {
        advance(&mut state, &mut rng, &mut run);
    }
    if let Some(cond) = &config.conditioning {
        // chains that never reached the ball cannot produce conditioned draws
        if state.overlap_distance(&cond.center) >= cond.radius {
            run.proposed += (draws * config.thin_sweeps) as u64;
            run.draws = 0;
            return run;
        }
    }
    for _ in 0..draws {
        for _ in 0..config.thin_sweeps {
            advance(&mut state, &mut rng, &mut run);
        }
        run.w.extend(w_from_sums(&state.sums, params.n, &centering.x_center, params.k));
        run.probes.push(probe(&StateView { sigma: &state.sigma, sums: &state.sums }));
        if config.record_pairs {
            run.pairs.push(pair_from_state(&state.sigma, &state.sums, xi, params, &centering.x_center, &mut rng));
        }
    }
    run
}

/// Exact one-step transition of the random-site heat-bath kernel applied to a
/// distribution over all `2^n` configurations (bit-indexed).
pub fn heat_bath_step(dist: &[f64], xi: &PatternSet, params: &ModelParams) -> Result<Vec<f64>> {
    check_inputs(xi, params)?;
    let n = params.n;
    if n > ENUMERATION_LIMIT || dist.len() != 1usize << n {
        return Err(Error::DimensionMismatch { expected: 1usize << n.min(ENUMERATION_LIMIT), found: dist.len() });
    }
    let sums_by_state = for_each_state(xi, |_, sums| sums.to_vec());
    let mut out = vec![0.0; dist.len()];
    for (bits, (&mass, sums)) in dist.iter().zip(&sums_by_state).enumerate() {
        if mass == 0.0 {
            continue;
        }
        for i in 0..n {
            let spin = if bits >> i & 1 == 1 { 1 } else { -1 };
            let p_up = logistic(2.0 * effective_field(i, spin, sums, xi, params));
            let up = bits | 1 << i;
            let down = bits & !(1 << i);
            out[up] += mass * p_up / n as f64;
            out[down] += mass * (1.0 - p_up) / n as f64;
        }
    }
    Ok(out)
}

/// Exact joint law of the integer overlap sums `(pi_k S, pi_k S')` of the pair,
/// by enumeration over the configuration, the resampled site and its new value.
pub fn exact_pair_law(xi: &PatternSet, params: &ModelParams) -> Result<BTreeMap<(Vec<i64>, Vec<i64>), f64>> {
    let probs = gibbs_probabilities(xi, params)?;
    let sums_by_state = for_each_state(xi, |_, sums| sums.to_vec());
    let n = params.n;
    let k = params.k;
    let mut law = BTreeMap::new();
    for (bits, (&prob, sums)) in probs.iter().zip(&sums_by_state).enumerate() {
        for i in 0..n {
            let spin: i8 = if bits >> i & 1 == 1 { 1 } else { -1 };
            let p_up = logistic(2.0 * effective_field(i, spin, sums, xi, params));
            for (new_spin, p_new) in [(1i8, p_up), (-1i8, 1.0 - p_up)] {
                let after: Vec<i64> = sums[..k]
                    .iter()
                    .zip(xi.row(i))
                    .map(|(&s, &x)| s + (new_spin - spin) as i64 * x as i64)
                    .collect();
                *law.entry((sums[..k].to_vec(), after)).or_insert(0.0) += prob * p_new / n as f64;
            }
        }
    }
    Ok(law)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::free_energy::find_lambda_max;
    use crate::model::{hamiltonian, log_gibbs_weight, overlap_sums};

    fn params(n: usize, p: usize, beta: f64, h: f64) -> ModelParams {
        ModelParams::unprojected(n, p, beta, h).unwrap()
    }

    #[test]
    fn gray_code_enumeration_matches_direct_sums() {
        let xi = PatternSet::generate(7, 2, 3).unwrap();
        let sums = for_each_state(&xi, |_, s| s.to_vec());
        for (bits, s) in sums.iter().enumerate() {
            let sigma = SpinConfig::from_bits(bits as u64, 7);
            assert_eq!(s, &overlap_sums(&sigma, &xi).unwrap());
        }
    }

    #[test]
    fn enumeration_probabilities_normalize() {
        let xi = PatternSet::generate(3, 1, 1).unwrap();
        let pr = params(3, 1, 1.3, 0.2);
        let probs = gibbs_probabilities(&xi, &pr).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        // direct weights
        let lw: Vec<f64> = (0..8).map(|b| log_gibbs_weight(&SpinConfig::from_bits(b, 3), &xi, &pr).unwrap()).collect();
        let z: f64 = lw.iter().map(|v| v.exp()).sum();
        for (p, l) in probs.iter().zip(&lw) {
            assert!((p - l.exp() / z).abs() < 1e-15);
        }
    }

    #[test]
    fn two_spin_free_atoms() {
        let xi = PatternSet::from_rows(2, 1, vec![1, -1], 0).unwrap();
        let pr = params(2, 1, 0.0, 0.0);
        let batch = enumerate_distribution(&xi, &pr, &CenteringResult::at_origin(1)).unwrap();
        let s2 = 2.0_f64.sqrt();
        assert_eq!(batch.len(), 3);
        let atoms: Vec<(f64, f64)> = batch.rows().map(|r| r[0]).zip(batch.weights.clone().unwrap()).collect();
        let expected = [(-2.0 / s2, 0.25), (0.0, 0.5), (2.0 / s2, 0.25)];
        for ((w, p), (ew, ep)) in atoms.iter().zip(expected) {
            assert!((w - ew).abs() < 1e-15 && (p - ep).abs() < 1e-15);
        }
    }

    #[test]
    fn field_free_law_is_symmetric() {
        let xi = PatternSet::generate(8, 2, 21).unwrap();
        let pr = params(8, 2, 1.4, 0.0);
        let batch = enumerate_distribution(&xi, &pr, &CenteringResult::at_origin(2)).unwrap();
        let weights = batch.weights.clone().unwrap();
        let law: BTreeMap<Vec<i64>, f64> = batch
            .rows()
            .zip(&weights)
            .map(|(r, &p)| (r.iter().map(|v| (v * 1e6).round() as i64).collect(), p))
            .collect();
        for (key, p) in &law {
            let mirrored: Vec<i64> = key.iter().map(|v| -v).collect();
            assert!((law[&mirrored] - p).abs() < 1e-14);
        }
        assert!(enumerate_distribution(&PatternSet::generate(25, 1, 0).unwrap(), &params(25, 1, 0.5, 0.0), &CenteringResult::at_origin(1)).is_err());
    }

    #[test]
    fn zero_coupling_sweep_gives_fair_coins() {
        let xi = PatternSet::generate(2000, 1, 5).unwrap();
        let pr = params(2000, 1, 0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = glauber_sweep(&SpinConfig::all_up(2000), &xi, &pr, &mut rng).unwrap();
        // about 1 - 1/e of the sites were visited; visited sites are fair coins
        let ups = s.spins().iter().filter(|&&v| v == 1).count() as f64;
        let expected_up = 2000.0 * ((-1.0f64).exp() + 0.5 * (1.0 - (-1.0f64).exp()));
        assert!((ups - expected_up).abs() < 4.0 * (2000.0f64 * 0.25).sqrt(), "ups {ups}");
    }

    #[test]
    fn heat_bath_satisfies_detailed_balance() {
        let xi = PatternSet::generate(5, 2, 13).unwrap();
        let pr = ModelParams::new(5, 2, 1.7, 0.3, -2, 2).unwrap();
        for bits in 0..32u64 {
            let sigma = SpinConfig::from_bits(bits, 5);
            for i in 0..5 {
                let other = sigma.with_spin(i, -sigma.get(i));
                let law = crate::model::conditional_spin_distribution(i, &sigma, &xi, &pr).unwrap();
                let lw_a = log_gibbs_weight(&sigma, &xi, &pr).unwrap();
                let lw_b = log_gibbs_weight(&other, &xi, &pr).unwrap();
                let forward = lw_a + law.prob(other.get(i)).ln();
                let backward = lw_b + law.prob(sigma.get(i)).ln();
                assert!((forward - backward).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stationarity_of_exact_sweep() {
        let xi = PatternSet::generate(6, 2, 4).unwrap();
        let pr = params(6, 2, 1.5, 0.3);
        let pi = gibbs_probabilities(&xi, &pr).unwrap();
        let mut d = pi.clone();
        for _ in 0..6 {
            d = heat_bath_step(&d, &xi, &pr).unwrap();
        }
        let err = d.iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn pair_moves_by_two_over_root_n() {
        let xi = PatternSet::generate(9, 3, 8).unwrap();
        let pr = ModelParams::new(9, 3, 1.2, 0.4, 1, 2).unwrap();
        let c = find_lambda_max(&xi, &pr).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sigma = SpinConfig::random(9, &mut rng);
        for _ in 0..200 {
            let pair = make_pair(&sigma, &xi, &pr, &c, &mut rng).unwrap();
            assert!(pair.delta_bound_ok);
            for (a, b) in pair.w.iter().zip(&pair.w_prime) {
                let d = (a - b).abs();
                assert!(d < 1e-12 || (d - 2.0 / 3.0).abs() < 1e-12);
            }
            if pair.new_spin == sigma.get(pair.site) {
                assert_eq!(pair.w, pair.w_prime);
            }
        }
    }

    #[test]
    fn chains_are_reproducible_and_centered_at_zero_coupling() {
        let xi = PatternSet::generate(50, 2, 2).unwrap();
        let pr = params(50, 2, 0.0, 0.0);
        let c = CenteringResult::at_origin(2);
        let cfg = ChainConfig { n_samples: 4000, seed: 77, record_pairs: true, ..Default::default() };
        let a = run_chains(&xi, &pr, &c, &cfg).unwrap();
        let b = run_chains(&xi, &pr, &c, &cfg).unwrap();
        assert_eq!(a.batch, b.batch);
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.batch.len(), 4000);
        // independent coins across sweeps: W_j has unit variance per draw
        for j in 0..2 {
            let mean = a.batch.rows().map(|r| r[j]).sum::<f64>() / 4000.0;
            assert!(mean.abs() < 4.0 / 4000f64.sqrt(), "mean {mean}");
        }
    }

    #[test]
    fn conditioned_chain_stays_in_ball() {
        let xi = PatternSet::generate(10, 1, 6).unwrap();
        let pr = params(10, 1, 1.5, 0.0);
        let c = find_lambda_max(&xi, &pr).unwrap();
        let center = vec![c.x_star];
        let cfg = ChainConfig {
            n_samples: 2000,
            seed: 5,
            conditioning: Some(Conditioning { center: center.clone(), radius: 0.5 }),
            ..Default::default()
        };
        let out = run_chains(&xi, &pr, &c, &cfg).unwrap();
        for r in out.batch.rows() {
            let overlap = r[0] / 10f64.sqrt() + c.x_center[0];
            assert!((overlap - center[0]).abs() < 0.5);
        }
        assert!(out.acceptance > 0.5);
    }

    #[test]
    fn impossible_conditioning_starves() {
        let xi = PatternSet::generate(10, 1, 6).unwrap();
        let pr = params(10, 1, 0.5, 0.0);
        let c = CenteringResult::at_origin(1);
        let cfg = ChainConfig {
            n_samples: 100,
            burnin_sweeps: 5,
            conditioning: Some(Conditioning { center: vec![0.95], radius: 0.01 }),
            ..Default::default()
        };
        assert!(matches!(run_chains(&xi, &pr, &c, &cfg), Err(Error::ConditioningStarvation { .. })));
    }

    #[test]
    fn hamiltonian_consistent_with_weights() {
        let xi = PatternSet::generate(6, 2, 1).unwrap();
        let pr = params(6, 2, 0.9, 0.0);
        let s = SpinConfig::from_bits(0b101101, 6);
        assert!((log_gibbs_weight(&s, &xi, &pr).unwrap() + 0.9 * hamiltonian(&s, &xi).unwrap()).abs() < 1e-15);
    }
}
