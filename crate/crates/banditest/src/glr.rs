//! Conjugate-prior posterior bookkeeping and the modified GLR statistics.
//!
//! The test statistic `Z_lm(n)` compares a *prior-averaged* likelihood of
//! hypothesis l against the *constrained maximum* likelihood of hypothesis m:
//!
//! ```text
//! Z_lm(n) = log H_l(prior) - log H_l(posterior)
//!           - n * sum_i w_i { eta*_i(m)^T kappa_hat_i - A(eta*_i(m)) }
//! ```
//!
//! where `H_l` is the inverse normalising factor of the conjugate prior
//! truncated to hypothesis set l, and the posterior hyperparameters are
//! exactly `(Y + Upsilon, N + n0)`. The common `sum_t log h(x_t)` term
//! cancels between numerator and denominator and is never computed.
//!
//! All likelihood arithmetic is carried out in the log domain.

use crate::error::{Error, Result};
use crate::expfam::{ExpFamilyModel, ExpectationParam, FamilyKind, ParamVec, SuffStat};
use crate::hypotheses::{HypothesisKind, HypothesisStructure, NaturalParamVector};
use crate::numeric::integrate_log_adaptive;

/// Conjugate-prior hyperparameters, one `(Upsilon_i, n0_i)` pair per arm.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorHyper {
    pub upsilon: Vec<SuffStat>,
    pub n0: Vec<f64>,
}

impl PriorHyper {
    /// Uniform prior across arms: `Upsilon_i = n0 * kappa_ref`, pseudo-count
    /// `n0`. With `kappa_ref = None` the family's reference expectation is
    /// used, which keeps every implemented family proper.
    pub fn uniform(model: &ExpFamilyModel, arm_count: usize, n0: f64, kappa_ref: Option<ExpectationParam>) -> Result<Self> {
        if !(n0 > 0.0) {
            return Err(Error::ImproperPrior(format!("pseudo-count n0 must be positive, got {n0}")));
        }
        let kref = kappa_ref.unwrap_or_else(|| model.reference_expectation());
        if kref.dim() != model.dim() {
            return Err(Error::Config("kappa_ref dimension does not match the family".into()));
        }
        let hyper = PriorHyper {
            upsilon: vec![kref.scale(n0); arm_count],
            n0: vec![n0; arm_count],
        };
        for i in 0..arm_count {
            log_single_normalizer(model, &hyper.upsilon[i], hyper.n0[i])?;
        }
        Ok(hyper)
    }
}

/// Running sufficient statistics per arm plus the prior hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    y: Vec<SuffStat>,
    pulls: Vec<u64>,
    prior: PriorHyper,
    n: u64,
    dim: usize,
}

impl PosteriorState {
    pub fn new(model: &ExpFamilyModel, arm_count: usize, prior: PriorHyper) -> Result<Self> {
        if prior.upsilon.len() != arm_count || prior.n0.len() != arm_count {
            return Err(Error::Config("prior hyperparameters must cover every arm".into()));
        }
        Ok(PosteriorState {
            y: vec![ParamVec::zeros(model.dim()); arm_count],
            pulls: vec![0; arm_count],
            prior,
            n: 0,
            dim: model.dim(),
        })
    }

    /// Record one observation from `arm`: `N_arm += 1`, `Y_arm += T(x)`.
    pub fn update(&mut self, model: &ExpFamilyModel, arm: usize, x: f64) {
        debug_assert!(arm < self.pulls.len());
        let t = model.suff_stat(x);
        self.y[arm].add_assign(&t);
        self.pulls[arm] += 1;
        self.n += 1;
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn pulls(&self) -> &[u64] {
        &self.pulls
    }

    pub fn arm_count(&self) -> usize {
        self.pulls.len()
    }

    pub fn suff_sum(&self, arm: usize) -> &SuffStat {
        &self.y[arm]
    }

    pub fn prior(&self) -> &PriorHyper {
        &self.prior
    }

    /// Empirical arm fractions `w_i = N_i / n`; all zeros at n = 0.
    pub fn weights(&self) -> Vec<f64> {
        if self.n == 0 {
            return vec![0.0; self.pulls.len()];
        }
        self.pulls.iter().map(|&c| c as f64 / self.n as f64).collect()
    }

    /// Per-arm empirical expectation parameters `Y_i / N_i`, with the
    /// family's reference point standing in for unpulled arms (those carry
    /// zero weight in every objective).
    pub fn kappa_hat(&self, model: &ExpFamilyModel) -> Vec<ExpectationParam> {
        (0..self.pulls.len())
            .map(|i| {
                if self.pulls[i] == 0 {
                    model.reference_expectation()
                } else {
                    self.y[i].scale(1.0 / self.pulls[i] as f64)
                }
            })
            .collect()
    }

    /// Posterior hyperparameters `(Y + Upsilon, N + n0)`.
    pub fn posterior_hyper(&self) -> (Vec<SuffStat>, Vec<f64>) {
        let ups = (0..self.pulls.len())
            .map(|i| {
                let mut u = self.y[i];
                u.add_assign(&self.prior.upsilon[i]);
                u
            })
            .collect();
        let n0 = (0..self.pulls.len())
            .map(|i| self.prior.n0[i] + self.pulls[i] as f64)
            .collect();
        (ups, n0)
    }
}

/// `log integral over the family domain of exp(eta^T upsilon - n0 A(eta))`,
/// the single-parameter conjugate normaliser. Closed form for every
/// implemented family; errors when the integral diverges.
pub fn log_single_normalizer(model: &ExpFamilyModel, upsilon: &SuffStat, n0: f64) -> Result<f64> {
    use statrs::function::gamma::ln_gamma;
    if !(n0 > 0.0) {
        return Err(Error::ImproperPrior(format!("pseudo-count must be positive, got {n0}")));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    match model.kind() {
        FamilyKind::GaussianKnownVariance { sigma2 } => {
            let u = upsilon.get(0);
            Ok(0.5 * (two_pi / (n0 * sigma2)).ln() + u * u / (2.0 * n0 * sigma2))
        }
        FamilyKind::GaussianKnownMean { .. } => {
            let u = upsilon.get(0);
            if !(u > 0.0) {
                return Err(Error::ImproperPrior(format!(
                    "known-mean Gaussian normaliser needs positive Upsilon, got {u}"
                )));
            }
            Ok(0.5 * n0 * 2.0_f64.ln() + ln_gamma(0.5 * n0 + 1.0) - (0.5 * n0 + 1.0) * u.ln())
        }
        FamilyKind::GaussianBothUnknown => {
            let (u1, u2) = (upsilon.get(0), upsilon.get(1));
            let c = u2 - u1 * u1 / n0;
            if !(c > 0.0) {
                return Err(Error::ImproperPrior(format!(
                    "both-unknown Gaussian normaliser needs Upsilon2 > Upsilon1^2 / n0, got margin {c}"
                )));
            }
            Ok(0.5 * (4.0 * std::f64::consts::PI / n0).ln()
                + 0.5 * n0 * 2.0_f64.ln()
                + ln_gamma(0.5 * (n0 + 3.0))
                - 0.5 * (n0 + 3.0) * c.ln())
        }
        FamilyKind::Poisson => {
            let u = upsilon.get(0);
            if !(u > 0.0) {
                return Err(Error::ImproperPrior(format!("Poisson normaliser needs positive Upsilon, got {u}")));
            }
            Ok(ln_gamma(u) - u * n0.ln())
        }
        FamilyKind::Bernoulli => {
            let u = upsilon.get(0);
            if !(u > 0.0 && u < n0) {
                return Err(Error::ImproperPrior(format!(
                    "Bernoulli normaliser needs 0 < Upsilon < n0, got Upsilon {u}, n0 {n0}"
                )));
            }
            Ok(ln_gamma(u) + ln_gamma(n0 - u) - ln_gamma(n0))
        }
    }
}

/// log of the truncated-region integral `-log H_l`, i.e. the log of
/// `integral over hypothesis set l of prod_i exp(eta_i^T Upsilon_i - n0_i A_i(eta_i))`.
///
/// Odd arm: the set is parameterised by (theta, theta'), so the integral
/// factorises into the odd arm's single normaliser times the pooled group's
/// (the excluded diagonal has measure zero). Best arm: 1-D outer integral
/// over the leader's parameter with the challengers' incomplete normalisers
/// inside, evaluated by adaptive Gauss-Kronrod quadrature in the log domain.
pub fn log_marginal_normalizer(
    structure: &HypothesisStructure,
    l: usize,
    upsilon: &[SuffStat],
    n0: &[f64],
) -> Result<f64> {
    let k = structure.arm_count();
    if l >= k || upsilon.len() != k || n0.len() != k {
        return Err(Error::Domain("hyperparameters must cover every arm".into()));
    }
    let model = structure.model();
    match structure.kind() {
        HypothesisKind::OddArm => {
            let own = log_single_normalizer(model, &upsilon[l], n0[l])?;
            let mut pooled_u = ParamVec::zeros(model.dim());
            let mut pooled_n0 = 0.0;
            for j in 0..k {
                if j != l {
                    pooled_u.add_assign(&upsilon[j]);
                    pooled_n0 += n0[j];
                }
            }
            let pooled = log_single_normalizer(model, &pooled_u, pooled_n0)?;
            Ok(own + pooled)
        }
        HypothesisKind::BestArm { direction } => best_arm_normalizer(structure, l, direction, upsilon, n0),
    }
}

/// Natural-domain bounds for scalar families (used to clip quadrature).
fn natural_bounds(model: &ExpFamilyModel) -> (f64, f64) {
    match model.kind() {
        FamilyKind::GaussianKnownMean { .. } => (f64::NEG_INFINITY, -1e-12),
        _ => (f64::NEG_INFINITY, f64::INFINITY),
    }
}

/// Mode and curvature scale of `t -> t Upsilon - n0 A(t)`.
fn weight_mode(model: &ExpFamilyModel, upsilon: f64, n0: f64) -> Result<(f64, f64)> {
    let kref = ParamVec::scalar(upsilon / n0);
    let mode = model
        .to_natural(&kref)
        .unwrap_or_else(|_| model.reference_natural());
    let h = model.hessian_log_partition(&mode)[0][0];
    let width = 1.0 / (n0 * h).sqrt().max(1e-12);
    Ok((mode.get(0), width))
}

/// Expand `[center - w, center + w]` until the log integrand has fallen 60
/// nats below its center value on both sides (or the domain ends).
fn bracket_by_decay<F: Fn(f64) -> f64>(log_f: &F, center: f64, width: f64, lo_bound: f64, hi_bound: f64) -> (f64, f64) {
    let peak = log_f(center);
    let mut lo = (center - width).max(lo_bound);
    let mut hi = (center + width).min(hi_bound);
    let mut w = width;
    for _ in 0..80 {
        if lo <= lo_bound + 1e-300 || log_f(lo) < peak - 60.0 {
            break;
        }
        w *= 2.0;
        lo = (center - w).max(lo_bound);
    }
    w = width;
    for _ in 0..80 {
        if hi >= hi_bound - 1e-300 || log_f(hi) < peak - 60.0 {
            break;
        }
        w *= 2.0;
        hi = (center + w).min(hi_bound);
    }
    (lo, hi)
}

/// log of the incomplete normaliser of arm j up to (or from, in the losing
/// direction) the leader value `t`.
fn log_incomplete_normalizer(
    model: &ExpFamilyModel,
    upsilon: f64,
    n0: f64,
    t: f64,
    upper: bool,
) -> Result<f64> {
    if let FamilyKind::GaussianKnownVariance { sigma2 } = model.kind() {
        // Closed form through the normal CDF.
        let a = n0 * sigma2;
        let full = 0.5 * (2.0 * std::f64::consts::PI / a).ln() + upsilon * upsilon / (2.0 * a);
        let z = a.sqrt() * (t - upsilon / a);
        let tail = if upper { crate::numeric::log_normal_cdf(z) } else { crate::numeric::log_normal_cdf(-z) };
        return Ok(full + tail);
    }
    let (lo_bound, hi_bound) = natural_bounds(model);
    let log_w = |s: f64| s * upsilon - n0 * model.log_partition_unchecked(&ParamVec::scalar(s));
    let (mode, width) = weight_mode(model, upsilon, n0)?;
    let (lo, hi) = bracket_by_decay(&log_w, mode, width * 8.0, lo_bound, hi_bound);
    let (a, b) = if upper { (lo.min(t), t) } else { (t, hi.max(t)) };
    if !(a < b) {
        return Ok(f64::NEG_INFINITY);
    }
    integrate_log_adaptive(a, b, 1e-8, &log_w)
}

fn best_arm_normalizer(
    structure: &HypothesisStructure,
    l: usize,
    direction: f64,
    upsilon: &[SuffStat],
    n0: &[f64],
) -> Result<f64> {
    let model = structure.model();
    let k = structure.arm_count();
    let winner_upper = direction > 0.0; // leader has the largest eta when c > 0
    let (lo_bound, hi_bound) = natural_bounds(model);

    let log_w_l = |t: f64| t * upsilon[l].get(0) - n0[l] * model.log_partition_unchecked(&ParamVec::scalar(t));
    let log_f = |t: f64| -> f64 {
        let mut v = log_w_l(t);
        for j in 0..k {
            if j == l {
                continue;
            }
            match log_incomplete_normalizer(model, upsilon[j].get(0), n0[j], t, winner_upper) {
                Ok(w) => v += w,
                Err(_) => return f64::NEG_INFINITY,
            }
        }
        v
    };

    // Bracket the outer integral around every arm's weight mode; the product
    // of incomplete normalisers only shifts mass between those modes.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..k {
        let (mode, width) = weight_mode(model, upsilon[i].get(0), n0[i])?;
        let (a, b) = bracket_by_decay(
            &|t: f64| t * upsilon[i].get(0) - n0[i] * model.log_partition_unchecked(&ParamVec::scalar(t)),
            mode,
            width * 8.0,
            lo_bound,
            hi_bound,
        );
        lo = lo.min(a);
        hi = hi.max(b);
    }
    match integrate_log_adaptive(lo, hi, 1e-8, &log_f) {
        Ok(v) => Ok(v),
        Err(_) => importance_sample_normalizer(&log_f, lo, hi),
    }
}

/// Fallback for a flagged quadrature: flat-proposal importance sampling over
/// the bracket with a deterministic stream.
fn importance_sample_normalizer<F: Fn(f64) -> f64>(log_f: &F, lo: f64, hi: f64) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0x5eed_ba5e);
    let draws = 100_000;
    let mut terms = Vec::with_capacity(draws);
    for _ in 0..draws {
        let t = rng.gen_range(lo..hi);
        terms.push(log_f(t));
    }
    let lse = crate::numeric::logsumexp(&terms);
    Ok(lse - (draws as f64).ln() + (hi - lo).ln())
}

/// `log f~_l(x^n | a^n)` with the common `sum log h(x_t)` term dropped:
/// `log H_l(prior) - log H_l(posterior)` per the averaged-likelihood
/// identity, i.e. `logZ_l(posterior) - logZ_l(prior)`.
pub fn log_avg_likelihood(structure: &HypothesisStructure, l: usize, state: &PosteriorState) -> Result<f64> {
    let prior = log_marginal_normalizer(structure, l, &state.prior().upsilon, &state.prior().n0)?;
    let (post_u, post_n0) = state.posterior_hyper();
    let post = log_marginal_normalizer(structure, l, &post_u, &post_n0)?;
    Ok(post - prior)
}

/// Constrained ML configuration for hypothesis m under the current empirical
/// weights, tolerating groups whose total weight is zero (their parameters
/// are free and do not affect the objective).
pub(crate) fn ml_configuration(
    structure: &HypothesisStructure,
    m: usize,
    w: &[f64],
    kappa_hat: &[ExpectationParam],
) -> Result<NaturalParamVector> {
    match structure.constrained_ml(m, w, kappa_hat) {
        Ok(v) => Ok(v),
        Err(Error::DegenerateWeights(_)) => {
            // Give every arm unit weight at its placeholder estimate; the
            // true objective ignores the zero-weight group entirely, and the
            // placeholder keeps the returned configuration inside the set.
            let w_fill: Vec<f64> = w.iter().map(|&x| if x > 0.0 { x } else { 1e-12 }).collect();
            structure.constrained_ml(m, &w_fill, kappa_hat)
        }
        Err(e) => Err(e),
    }
}

/// `log f-hat(x^n | a^n, hypothesis m)` with the `sum log h` term dropped:
/// `n * sum_i w_i { eta*_i(m)^T kappa_hat_i - A(eta*_i(m)) }`.
pub fn log_ml_likelihood(structure: &HypothesisStructure, m: usize, state: &PosteriorState) -> Result<f64> {
    if state.n() == 0 {
        return Ok(0.0);
    }
    let model = structure.model();
    let w = state.weights();
    let kappa_hat = state.kappa_hat(model);
    let config = ml_configuration(structure, m, &w, &kappa_hat)?;
    Ok(state.n() as f64 * structure.weighted_objective(&w, &kappa_hat, &config))
}

/// Modified GLR of hypothesis l against hypothesis m.
pub fn z_lm(structure: &HypothesisStructure, l: usize, m: usize, state: &PosteriorState) -> Result<f64> {
    if l == m {
        return Err(Error::Domain("z_lm requires distinct hypotheses".into()));
    }
    Ok(log_avg_likelihood(structure, l, state)? - log_ml_likelihood(structure, m, state)?)
}

/// Modified GLR of hypothesis l against its nearest alternative:
/// `Z_l(n) = min over m != l of Z_lm(n)`.
pub fn z_min(structure: &HypothesisStructure, l: usize, state: &PosteriorState) -> Result<f64> {
    let stats = all_statistics(structure, state)?;
    Ok(stats.z[l])
}

/// All per-hypothesis statistics in one sweep: the M averaged likelihoods,
/// the M constrained-ML likelihoods and `Z_l = avg_l - max_{m != l} ml_m`.
#[derive(Debug, Clone)]
pub struct ZStatistics {
    pub log_avg: Vec<f64>,
    pub log_ml: Vec<f64>,
    pub z: Vec<f64>,
    /// The constrained-ML configurations, reusable by the sampling rule.
    pub ml_configs: Vec<NaturalParamVector>,
}

pub fn all_statistics(structure: &HypothesisStructure, state: &PosteriorState) -> Result<ZStatistics> {
    let m_count = structure.hypothesis_count();
    let model = structure.model();
    let w = state.weights();
    let kappa_hat = state.kappa_hat(model);
    let mut log_avg = Vec::with_capacity(m_count);
    let mut log_ml = Vec::with_capacity(m_count);
    let mut ml_configs = Vec::with_capacity(m_count);
    for m in 0..m_count {
        log_avg.push(log_avg_likelihood(structure, m, state)?);
        if state.n() == 0 {
            log_ml.push(0.0);
            ml_configs.push(ml_configuration(structure, m, &vec![1e-12; w.len()], &kappa_hat)?);
        } else {
            let config = ml_configuration(structure, m, &w, &kappa_hat)?;
            log_ml.push(state.n() as f64 * structure.weighted_objective(&w, &kappa_hat, &config));
            ml_configs.push(config);
        }
    }
    let z = (0..m_count)
        .map(|l| {
            let worst_rival = (0..m_count)
                .filter(|&m| m != l)
                .map(|m| log_ml[m])
                .fold(f64::NEG_INFINITY, f64::max);
            log_avg[l] - worst_rival
        })
        .collect();
    Ok(ZStatistics { log_avg, log_ml, z, ml_configs })
}
