//! The sluggish, modified-GLR, forced-exploration sequential controller.
//!
//! At each time n the controller scores every hypothesis with the modified
//! GLR statistic `Z_l(n)`, stops as soon as the best score crosses the fixed
//! threshold `log((M-1) L)`, and otherwise draws a Bernoulli(gamma) coin: on
//! tails it re-pulls the current arm (sluggish switching), on heads it
//! actively samples, either forcing an under-explored arm or D-tracking the
//! oracle weights evaluated at the constrained-ML parameter estimate of the
//! current best hypothesis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::glr::{all_statistics, PosteriorState, PriorHyper};
use crate::hypotheses::{HypothesisStructure, NaturalParamVector};
use crate::oracle::{optimal_weights, SamplingWeights};

/// Pairwise switching-cost matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchCost {
    k: usize,
    cost: Vec<f64>,
}

impl SwitchCost {
    pub fn uniform(k: usize, off_diagonal: f64) -> Result<Self> {
        if !(off_diagonal >= 0.0) || !off_diagonal.is_finite() {
            return Err(Error::Config(format!("switch cost must be nonnegative and finite, got {off_diagonal}")));
        }
        let mut cost = vec![off_diagonal; k * k];
        for a in 0..k {
            cost[a * k + a] = 0.0;
        }
        Ok(SwitchCost { k, cost })
    }

    pub fn from_matrix(matrix: Vec<Vec<f64>>) -> Result<Self> {
        let k = matrix.len();
        let mut cost = Vec::with_capacity(k * k);
        for (a, row) in matrix.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Config("switch cost matrix must be square".into()));
            }
            for (b, &g) in row.iter().enumerate() {
                if !(g >= 0.0) || !g.is_finite() {
                    return Err(Error::Config("switch costs must be nonnegative and finite".into()));
                }
                if a == b && g != 0.0 {
                    return Err(Error::Config("switch cost diagonal must be zero".into()));
                }
                cost.push(g);
            }
        }
        Ok(SwitchCost { k, cost })
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.cost[from * self.k + to]
    }

    pub fn g_max(&self) -> f64 {
        self.cost.iter().cloned().fold(0.0, f64::max)
    }
}

/// Tuning parameters of the controller.
#[derive(Debug, Clone)]
pub struct PolicyConfig {
    /// Threshold parameter L >= 1; the stopping threshold is log((M-1) L).
    pub threshold: f64,
    /// Switching parameter gamma in (0, 1]; probability of an active step.
    pub gamma: f64,
    /// Forced-exploration exponent beta in (1/2, 1).
    pub beta: f64,
    pub switch_cost: SwitchCost,
    pub seed: u64,
    /// Prior pseudo-count shared by all arms.
    pub prior_n0: f64,
    /// Optional prior reference expectation; family default when absent.
    pub prior_kappa_ref: Option<crate::expfam::ExpectationParam>,
    /// Hard horizon; `None` derives the cap from the oracle value.
    pub horizon_cap: Option<u64>,
    /// Record the per-step arm sequence in the trial record.
    pub record_arms: bool,
}

impl PolicyConfig {
    pub fn validate(&self, arm_count: usize) -> Result<()> {
        if !(self.threshold >= 1.0) {
            return Err(Error::Config(format!("threshold parameter L must be >= 1, got {}", self.threshold)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        // The asymptotic guarantees need beta strictly above 1/2; the
        // exploration floor itself also holds at the boundary value, which
        // the reference experiments use, so 0.5 is admitted.
        if !(self.beta >= 0.5 && self.beta < 1.0) {
            return Err(Error::Config(format!("beta must lie in [1/2, 1), got {}", self.beta)));
        }
        if self.switch_cost.k != arm_count {
            return Err(Error::Config("switch cost matrix size must match the arm count".into()));
        }
        Ok(())
    }
}

/// What the controller decided at one time step.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Continue { arm: usize },
    Stop { decision: usize },
}

/// Full mutable state of one trial.
#[derive(Debug, Clone)]
pub struct PolicyState {
    pub n: u64,
    pub n_active: u64,
    pub pulls: Vec<u64>,
    pub active_pulls: Vec<u64>,
    pub current_arm: usize,
    pub posterior: PosteriorState,
    pub stopped: Option<usize>,
    pub floor_violations: u64,
    rng: ChaCha12Rng,
    oracle_cache: Option<(usize, Vec<i64>, SamplingWeights)>,
}

/// Per-step observability hook for traces and diagnostics.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub n: u64,
    /// Arm chosen for the next pull (the stopping step repeats the current arm).
    pub arm: usize,
    /// Whether the step was active (the Bernoulli(gamma) draw).
    pub active: bool,
    pub l_star: usize,
    pub z_l_star: f64,
    pub z: Vec<f64>,
    pub stopped: bool,
}

/// Outcome of one completed trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub tau: u64,
    pub decision: usize,
    pub cost: f64,
    pub switches: u64,
    pub correct: bool,
    pub floor_violations: u64,
    pub arm_history: Option<Vec<u16>>,
}

impl PolicyState {
    /// Initialise the trial: pull arm 1 (index 0) once, as the controller
    /// prescribes, and count it as an active pull.
    pub fn init(
        config: &PolicyConfig,
        structure: &HypothesisStructure,
        truth: &NaturalParamVector,
        seed: u64,
    ) -> Result<Self> {
        config.validate(structure.arm_count())?;
        let k = structure.arm_count();
        let prior = PriorHyper::uniform(structure.model(), k, config.prior_n0, config.prior_kappa_ref)?;
        let mut posterior = PosteriorState::new(structure.model(), k, prior)?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let x = structure.model().sample(truth.arm(0), &mut rng)?;
        posterior.update(structure.model(), 0, x);
        let mut pulls = vec![0u64; k];
        let mut active_pulls = vec![0u64; k];
        pulls[0] = 1;
        active_pulls[0] = 1;
        Ok(PolicyState {
            n: 1,
            n_active: 1,
            pulls,
            active_pulls,
            current_arm: 0,
            posterior,
            stopped: None,
            floor_violations: 0,
            rng,
            oracle_cache: None,
        })
    }

    fn argmax_tie_uniform(&mut self, values: &[f64]) -> usize {
        let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ties: Vec<usize> = (0..values.len()).filter(|&i| values[i] == best).collect();
        if ties.len() == 1 {
            ties[0]
        } else {
            ties[self.rng.gen_range(0..ties.len())]
        }
    }

    fn argmin_tie_uniform_u64(&mut self, values: &[u64]) -> usize {
        let best = *values.iter().min().expect("nonempty");
        let ties: Vec<usize> = (0..values.len()).filter(|&i| values[i] == best).collect();
        if ties.len() == 1 {
            ties[0]
        } else {
            ties[self.rng.gen_range(0..ties.len())]
        }
    }

    /// Exploration floor that the sampling rule is proven to maintain:
    /// `N_i^{n,a} >= [(n^a)^beta - (beta (K+1))^(beta/(1-beta))]_+ - 1`.
    fn check_exploration_floor(&mut self, beta: f64, k: usize) {
        let na = self.n_active as f64;
        let c = (beta * (k as f64 + 1.0)).powf(beta / (1.0 - beta));
        let floor = (na.powf(beta) - c).max(0.0) - 1.0;
        for &count in &self.active_pulls {
            if (count as f64) < floor {
                self.floor_violations += 1;
                debug_assert!(false, "exploration floor violated: {count} < {floor} at n^a = {na}");
            }
        }
    }
}

/// One controller step: stopping check at the current time, then (if
/// continuing) the sluggish/active arm choice, the pull and all updates.
pub fn step(
    state: &mut PolicyState,
    config: &PolicyConfig,
    structure: &HypothesisStructure,
    truth: &NaturalParamVector,
) -> Result<Action> {
    let (action, _) = step_traced(state, config, structure, truth)?;
    Ok(action)
}

/// As [`step`] but also returns the per-step trace row.
pub fn step_traced(
    state: &mut PolicyState,
    config: &PolicyConfig,
    structure: &HypothesisStructure,
    truth: &NaturalParamVector,
) -> Result<(Action, StepTrace)> {
    if state.stopped.is_some() {
        return Err(Error::Domain("step called on a stopped trial".into()));
    }
    let m_count = structure.hypothesis_count();
    let stats = all_statistics(structure, &state.posterior)?;
    let l_star = state.argmax_tie_uniform(&stats.z);
    let threshold = ((m_count as f64 - 1.0) * config.threshold).ln();

    if stats.z[l_star] >= threshold {
        state.stopped = Some(l_star);
        let trace = StepTrace {
            n: state.n,
            arm: state.current_arm,
            active: false,
            l_star,
            z_l_star: stats.z[l_star],
            z: stats.z,
            stopped: true,
        };
        return Ok((Action::Stop { decision: l_star }, trace));
    }

    let (next_arm, active) = sample_next(state, config, structure, truth, l_star, &stats.ml_configs[l_star])?;
    let trace = StepTrace {
        n: state.n - 1,
        arm: next_arm,
        active,
        l_star,
        z_l_star: stats.z[l_star],
        z: stats.z,
        stopped: false,
    };
    Ok((Action::Continue { arm: next_arm }, trace))
}

/// Shared continue-branch dynamics: the Bernoulli(gamma) coin, the forced
/// exploration / D-tracking arm choice, the pull and all count updates.
fn sample_next(
    state: &mut PolicyState,
    config: &PolicyConfig,
    structure: &HypothesisStructure,
    truth: &NaturalParamVector,
    l_star: usize,
    ml_config: &NaturalParamVector,
) -> Result<(usize, bool)> {
    let k = structure.arm_count();
    let active = state.rng.gen::<f64>() < config.gamma;
    let next_arm = if !active {
        state.current_arm
    } else {
        state.n_active += 1;
        let na = state.n_active as f64;
        let forced_cut = na.powf(config.beta) - (config.beta * k as f64).powf(config.beta / (1.0 - config.beta));
        let under_explored = state.active_pulls.iter().any(|&c| (c as f64) < forced_cut);
        if under_explored {
            let counts = state.active_pulls.clone();
            state.argmin_tie_uniform_u64(&counts)
        } else {
            let lambda = tracked_weights(state, structure, l_star, ml_config)?;
            let scores: Vec<f64> = (0..k)
                .map(|i| na * lambda.get(i) - state.active_pulls[i] as f64)
                .collect();
            state.argmax_tie_uniform(&scores)
        }
    };
    if active {
        state.active_pulls[next_arm] += 1;
    }
    state.pulls[next_arm] += 1;
    let x = structure.model().sample(truth.arm(next_arm), &mut state.rng)?;
    state.posterior.update(structure.model(), next_arm, x);
    state.n += 1;
    state.check_exploration_floor(config.beta, k);
    state.current_arm = next_arm;
    Ok((next_arm, active))
}

/// Oracle weights at the constrained-ML estimate, recomputed only when the
/// quantised estimate moves (step 1e-4 per component).
fn tracked_weights(
    state: &mut PolicyState,
    structure: &HypothesisStructure,
    l_star: usize,
    ml_config: &NaturalParamVector,
) -> Result<SamplingWeights> {
    let key: Vec<i64> = ml_config
        .arms()
        .iter()
        .flat_map(|p| p.as_slice().iter().map(|&v| (v / 1e-4).round() as i64))
        .collect();
    if let Some((cached_l, cached_key, cached)) = &state.oracle_cache {
        if *cached_l == l_star && *cached_key == key {
            return Ok(cached.clone());
        }
    }
    let result = optimal_weights(structure, l_star, ml_config)?;
    state.oracle_cache = Some((l_star, key, result.lambda_star.clone()));
    Ok(result.lambda_star)
}

/// Hard horizon: `200 * ceil(log((M-1) L) / D*)` when the oracle value is
/// computable at the true configuration, a fixed large cap otherwise. A
/// floor keeps threshold-zero configurations (L = 1, M = 2) runnable.
pub fn horizon_cap(config: &PolicyConfig, structure: &HypothesisStructure, truth: &NaturalParamVector) -> u64 {
    if let Some(cap) = config.horizon_cap {
        return cap;
    }
    let m = structure.hypothesis_count() as f64;
    let threshold = ((m - 1.0) * config.threshold).ln();
    let mut l_true = None;
    for l in 0..structure.hypothesis_count() {
        if structure.contains(truth, l) {
            l_true = Some(l);
            break;
        }
    }
    match l_true.and_then(|l| optimal_weights(structure, l, truth).ok()) {
        Some(r) if r.d_star > 0.0 => (200.0 * (threshold / r.d_star).ceil()).max(1000.0) as u64,
        _ => 1_000_000,
    }
}

/// Run one full trial to the stopping decision.
pub fn run_trial(
    config: &PolicyConfig,
    structure: &HypothesisStructure,
    truth: &NaturalParamVector,
    seed: u64,
) -> Result<TrialRecord> {
    run_trial_observed(config, structure, truth, seed, |_| {})
}

/// Run one trial, feeding every step's trace row to the observer.
pub fn run_trial_observed<F: FnMut(&StepTrace)>(
    config: &PolicyConfig,
    structure: &HypothesisStructure,
    truth: &NaturalParamVector,
    seed: u64,
    mut observer: F,
) -> Result<TrialRecord> {
    let true_l = (0..structure.hypothesis_count()).find(|&l| structure.contains(truth, l));
    let cap = horizon_cap(config, structure, truth);
    let mut state = PolicyState::init(config, structure, truth, seed)?;
    let mut cost = 0.0;
    let mut switches = 0u64;
    let mut arms: Vec<u16> = if config.record_arms { vec![0] } else { Vec::new() };
    loop {
        let prev_arm = state.current_arm;
        let (action, trace) = step_traced(&mut state, config, structure, truth)?;
        observer(&trace);
        match action {
            Action::Stop { decision } => {
                let tau = state.n;
                let record = TrialRecord {
                    tau,
                    decision,
                    cost: tau as f64 + cost,
                    switches,
                    correct: true_l == Some(decision),
                    floor_violations: state.floor_violations,
                    arm_history: if config.record_arms { Some(arms) } else { None },
                };
                debug_assert!(record.cost >= record.tau as f64);
                debug_assert!(
                    record.cost <= record.tau as f64 * (1.0 + config.switch_cost.g_max()) + 1e-9
                );
                return Ok(record);
            }
            Action::Continue { arm } => {
                if arm != prev_arm {
                    switches += 1;
                    cost += config.switch_cost.get(prev_arm, arm);
                }
                if config.record_arms {
                    arms.push(arm as u16);
                }
                if state.n >= cap {
                    return Err(Error::Censored { cap });
                }
            }
        }
    }
}

/// Diagnostics of a never-stopping run.
#[derive(Debug, Clone)]
pub struct NonstopDiagnostics {
    pub horizon: u64,
    /// `N_i^n / n` at the horizon.
    pub final_fractions: Vec<f64>,
    /// `N_i^{n,a} / n^a` at the horizon.
    pub final_active_fractions: Vec<f64>,
    /// Last time the controller's best hypothesis differed from the truth.
    pub last_disagreement: Option<u64>,
    pub floor_violations: u64,
    pub final_z: Vec<f64>,
}

/// Same dynamics with the stopping rule disabled, run to a fixed horizon.
pub fn run_nonstopping(
    config: &PolicyConfig,
    structure: &HypothesisStructure,
    truth: &NaturalParamVector,
    seed: u64,
    horizon: u64,
) -> Result<NonstopDiagnostics> {
    let true_l = (0..structure.hypothesis_count()).find(|&l| structure.contains(truth, l));
    let mut state = PolicyState::init(config, structure, truth, seed)?;
    let mut last_disagreement = None;
    let mut final_z = Vec::new();
    while state.n < horizon {
        let (_, trace) = step_nonstopping(&mut state, config, structure, truth)?;
        if Some(trace.l_star) != true_l {
            last_disagreement = Some(trace.n);
        }
        final_z = trace.z;
    }
    Ok(NonstopDiagnostics {
        horizon,
        final_fractions: state.pulls.iter().map(|&c| c as f64 / state.n as f64).collect(),
        final_active_fractions: state
            .active_pulls
            .iter()
            .map(|&c| c as f64 / state.n_active as f64)
            .collect(),
        last_disagreement,
        floor_violations: state.floor_violations,
        final_z,
    })
}

/// One step of the never-stopping variant: identical dynamics, the stop
/// branch is simply not taken.
fn step_nonstopping(
    state: &mut PolicyState,
    config: &PolicyConfig,
    structure: &HypothesisStructure,
    truth: &NaturalParamVector,
) -> Result<(Action, StepTrace)> {
    let stats = all_statistics(structure, &state.posterior)?;
    let l_star = state.argmax_tie_uniform(&stats.z);
    let (next_arm, active) = sample_next(state, config, structure, truth, l_star, &stats.ml_configs[l_star])?;
    let trace = StepTrace {
        n: state.n - 1,
        arm: next_arm,
        active,
        l_star,
        z_l_star: stats.z[l_star],
        z: stats.z,
        stopped: false,
    };
    Ok((Action::Continue { arm: next_arm }, trace))
}
