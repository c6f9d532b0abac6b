//! The max-min sampling-weight oracle.
//!
//! For a configuration inside hypothesis set l, `D*` is the value of
//! `max over sampling weights lambda of F(lambda, eta)`, where `F` is the
//! weighted nearest-alternative infimum from [`crate::hypotheses`]. `D*`
//! is the inverse of the optimal delay slope and `lambda*` is the target of
//! the D-tracking sampling rule.
//!
//! Odd-arm structures are solved through the 1-D reduction: the optimal
//! weights are symmetric across the non-odd arms, so the problem collapses
//! to maximising a strictly concave scalar function `Phi(lambda_l)`. Best-arm
//! and generic structures run projected supergradient ascent on the simplex.
//!
//! Every result carries a primal-dual certificate. Writing the problem as
//! `max_lambda min_m F_m(lambda)` with concave pieces, minimax duality gives
//! the upper bound `UB(mu) = max_lambda sum_m mu_m F_m(lambda)` for any
//! piece mixture `mu`; the reported `certificate_gap` is `UB(mu_hat) -
//! F(lambda_hat)` for a stationarity-fitted `mu_hat`, which vanishes to
//! second order at the optimum.

use crate::error::{Error, Result};
use crate::hypotheses::{HypothesisKind, HypothesisStructure, NaturalParamVector};
use crate::numeric::{golden_section_max, project_simplex};

/// Probability vector over the arms.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingWeights {
    weights: Vec<f64>,
}

impl SamplingWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::Domain("sampling weights must be nonnegative".into()));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("sampling weights must sum to 1, got {s}")));
        }
        Ok(SamplingWeights { weights })
    }

    pub fn uniform(k: usize) -> Self {
        SamplingWeights { weights: vec![1.0 / k as f64; k] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Output of the max-min solve.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub lambda_star: SamplingWeights,
    pub d_star: f64,
    pub iterations: usize,
    pub certificate_gap: f64,
}

/// Certificate threshold above which the solve is reported as a failure
/// (scaled by `1 + |D*|` so that degenerate near-boundary configurations
/// with very large divergences are judged relatively).
pub const CERTIFICATE_TOL: f64 = 1e-5;

const MAX_ITERS: usize = 5000;

/// Binary relative entropy `d_b(alpha || 1 - alpha)`.
pub fn binary_kl(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie strictly inside (0, 1), got {alpha}")));
    }
    Ok(alpha * (alpha / (1.0 - alpha)).ln() + (1.0 - alpha) * ((1.0 - alpha) / alpha).ln())
}

/// Information-theoretic lower bound on the expected delay:
/// `d_b(alpha || 1 - alpha) / D*`.
pub fn lower_bound_delay(alpha: f64, d_star: f64) -> Result<f64> {
    if !(d_star > 0.0) {
        return Err(Error::Domain(format!("d_star must be positive, got {d_star}")));
    }
    Ok(binary_kl(alpha)? / d_star)
}

/// The 1-D odd-arm objective `Phi(lambda_l)`: the value of F at the
/// symmetric weight vector with mass `lambda_l` on the odd arm.
pub fn odd_arm_phi(structure: &HypothesisStructure, l: usize, params: &NaturalParamVector, lambda_l: f64) -> Result<f64> {
    if !matches!(structure.kind(), HypothesisKind::OddArm) {
        return Err(Error::Unsupported("odd_arm_phi requires an odd-arm structure".into()));
    }
    let lam = symmetric_weights(structure.arm_count(), l, lambda_l);
    Ok(structure.alternative_evaluator(l, params)?.value(&lam))
}

fn symmetric_weights(k: usize, l: usize, lambda_l: f64) -> Vec<f64> {
    let rest = (1.0 - lambda_l) / (k as f64 - 1.0);
    (0..k).map(|i| if i == l { lambda_l } else { rest }).collect()
}

/// Solve for the optimal sampling weights and `D*`.
pub fn optimal_weights(structure: &HypothesisStructure, l: usize, params: &NaturalParamVector) -> Result<OracleResult> {
    if !structure.contains(params, l) {
        return Err(Error::Domain(format!(
            "configuration is not strictly inside hypothesis set {l}; the max-min value is undefined there"
        )));
    }
    match structure.kind() {
        HypothesisKind::OddArm => solve_odd_arm(structure, l, params),
        HypothesisKind::BestArm { .. } => solve_best_arm(structure, l, params),
    }
}

/// Convenience projection of [`optimal_weights`] onto the value.
pub fn d_star(structure: &HypothesisStructure, l: usize, params: &NaturalParamVector) -> Result<f64> {
    Ok(optimal_weights(structure, l, params)?.d_star)
}

fn solve_odd_arm(structure: &HypothesisStructure, l: usize, params: &NaturalParamVector) -> Result<OracleResult> {
    let eval = structure.alternative_evaluator(l, params)?;
    let k = structure.arm_count();
    let phi = |x: f64| eval.value(&symmetric_weights(k, l, x));
    let (lam_l, value) = golden_section_max(0.0, 1.0, 1e-10, phi);
    let lambda = symmetric_weights(k, l, lam_l);
    let gap = certificate_gap(structure, l, params, &lambda, value)?;
    if gap > CERTIFICATE_TOL * (1.0 + value.abs()) {
        return Err(Error::NonConvergence { gap, iterations: 0 });
    }
    Ok(OracleResult {
        lambda_star: SamplingWeights::new(lambda)?,
        d_star: value,
        iterations: 0,
        certificate_gap: gap,
    })
}

/// Best-arm solve through the equalisation characterisation: at the optimum
/// every challenger's pairwise value equals a common level y, and the ratio
/// of the leader's to the challenger's divergence at the pooled point sums
/// to one across challengers. Two nested bisections recover y and the
/// per-challenger weight shares to near machine precision, which plain
/// ascent cannot reach when some optimal weight is close to zero.
fn solve_best_arm(structure: &HypothesisStructure, l: usize, params: &NaturalParamVector) -> Result<OracleResult> {
    let eval = structure.alternative_evaluator(l, params)?;
    let k = structure.arm_count();
    let model = structure.model();
    let challengers: Vec<usize> = (0..k).filter(|&j| j != l).collect();

    // Pairwise value and divergence ratio at unnormalised weights (1, x).
    let pair = |j: usize, x: f64| -> (f64, f64) {
        let kl_ = model.to_expectation(params.arm(l)).expect("validated");
        let kj = model.to_expectation(params.arm(j)).expect("validated");
        let mixed = kl_.scale(1.0 / (1.0 + x)).axpy(x / (1.0 + x), &kj);
        let eta_tilde = model.to_natural(&mixed).expect("interior mixture");
        let dl = model.kl_unchecked(params.arm(l), &eta_tilde);
        let dj = model.kl_unchecked(params.arm(j), &eta_tilde);
        (dl + x * dj, dl / dj.max(1e-300))
    };
    // Full-separation value of challenger j: the pairwise value as x -> inf.
    let d_full: Vec<f64> = challengers
        .iter()
        .map(|&j| model.kl_unchecked(params.arm(l), params.arm(j)))
        .collect();
    let y_max = d_full.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(y_max > 0.0) {
        return Err(Error::Domain("leader coincides with a challenger".into()));
    }

    // x_j(y): the share solving pair value = y; g_j is increasing in x.
    let share = |j: usize, y: f64| -> f64 {
        let mut hi = 1.0;
        while pair(j, hi).0 < y && hi < 1e12 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if pair(j, mid).0 < y {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * (1.0 + hi) {
                break;
            }
        }
        0.5 * (lo + hi)
    };
    let ratio_sum = |y: f64| -> f64 {
        challengers
            .iter()
            .map(|&j| {
                let x = share(j, y);
                pair(j, x).1
            })
            .sum()
    };

    // y*: the equalised level where the ratios sum to one.
    let mut lo = 0.0;
    let mut hi = y_max * (1.0 - 1e-12);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio_sum(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + hi) {
            break;
        }
    }
    let y_star = 0.5 * (lo + hi);

    let mut lambda = vec![0.0; k];
    lambda[l] = 1.0;
    for &j in &challengers {
        lambda[j] = share(j, y_star);
    }
    let total: f64 = lambda.iter().sum();
    lambda.iter_mut().for_each(|x| *x /= total);
    let value = eval.value(&lambda);
    let gap = certificate_gap(structure, l, params, &lambda, value)?;
    if gap > CERTIFICATE_TOL * (1.0 + value.abs()) {
        return Err(Error::NonConvergence { gap, iterations: 0 });
    }
    Ok(OracleResult {
        lambda_star: SamplingWeights::new(lambda)?,
        d_star: value,
        iterations: 0,
        certificate_gap: gap,
    })
}

/// Value of F together with per-piece values and gradients at `lambda`.
struct PieceEval {
    value: f64,
    piece_values: Vec<f64>,
    piece_grads: Vec<Vec<f64>>,
    alternatives: Vec<usize>,
}

fn eval_pieces(
    eval: &crate::hypotheses::AlternativeEvaluator<'_>,
    structure: &HypothesisStructure,
    l: usize,
    lambda: &[f64],
) -> PieceEval {
    let k = structure.arm_count();
    let mut piece_values = Vec::new();
    let mut piece_grads = Vec::new();
    let mut alternatives = Vec::new();
    let mut value = f64::INFINITY;
    for m in 0..structure.hypothesis_count() {
        if m == l {
            continue;
        }
        let v = eval.piece_value(m, lambda);
        let mut g = vec![0.0; k];
        eval.piece_gradient(m, lambda, &mut g);
        value = value.min(v);
        piece_values.push(v);
        piece_grads.push(g);
        alternatives.push(m);
    }
    PieceEval { value, piece_values, piece_grads, alternatives }
}

/// Projected supergradient ascent over the simplex, using the average of the
/// active pieces' gradients as the ascent direction and an a/sqrt(t) base
/// step augmented with a backtracking probe. Works for any structure; used
/// directly for best-arm instances and as the cross-check route for odd-arm.
pub fn optimal_weights_generic(
    structure: &HypothesisStructure,
    l: usize,
    params: &NaturalParamVector,
) -> Result<OracleResult> {
    if !structure.contains(params, l) {
        return Err(Error::Domain(format!("configuration is not strictly inside hypothesis set {l}")));
    }
    let evaluator = structure.alternative_evaluator(l, params)?;
    let k = structure.arm_count();
    let mut lambda = vec![1.0 / k as f64; k];
    let mut best_lambda = lambda.clone();
    let mut best_value = evaluator.value(&lambda);
    let base_step = 0.5;

    let mut iterations = 0;
    for t in 1..=MAX_ITERS {
        iterations = t;
        let eval = eval_pieces(&evaluator, structure, l, &lambda);
        if eval.value > best_value {
            best_value = eval.value;
            best_lambda = lambda.clone();
        }
        // Average the gradients of all pieces within tolerance of the min;
        // the average is a supergradient and preserves the symmetry of
        // exchangeable instances.
        let tol = 1e-9 + 1e-6 * eval.value.abs();
        let active: Vec<usize> = (0..eval.piece_values.len())
            .filter(|&i| eval.piece_values[i] <= eval.value + tol)
            .collect();
        let mut g = vec![0.0; k];
        for &i in &active {
            for j in 0..k {
                g[j] += eval.piece_grads[i][j] / active.len() as f64;
            }
        }
        let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if gnorm < 1e-15 {
            break;
        }
        // Candidate steps: the diminishing schedule plus a geometric probe,
        // keeping whichever projected point improves F the most.
        let mut step_best: Option<(f64, Vec<f64>)> = None;
        let mut probe = base_step / (t as f64).sqrt();
        let mut candidates = vec![probe];
        probe = 1.0 / gnorm.max(1e-9);
        for _ in 0..12 {
            candidates.push(probe);
            probe *= 0.5;
        }
        for &s in &candidates {
            let trial: Vec<f64> = (0..k).map(|j| lambda[j] + s * g[j]).collect();
            let proj = project_simplex(&trial);
            let v = evaluator.value(&proj);
            if step_best.as_ref().map_or(true, |(bv, _)| v > *bv) {
                step_best = Some((v, proj));
            }
        }
        let (cand_value, cand_lambda) = step_best.expect("candidate list nonempty");
        if cand_value > best_value + 1e-14 {
            best_value = cand_value;
            best_lambda = cand_lambda.clone();
            lambda = cand_lambda;
        } else {
            // No candidate improved: fall back to the diminishing step to
            // keep exploring, as plain supergradient ascent would.
            let s = base_step / (t as f64).sqrt();
            let trial: Vec<f64> = (0..k).map(|j| lambda[j] + s * g[j]).collect();
            lambda = project_simplex(&trial);
        }
        if t >= 30 && t % 10 == 0 {
            if t % 100 == 0 {
                let (lam_r, val_r) = refine_primal_dual(&evaluator, structure, l, &best_lambda, best_value);
                if val_r > best_value {
                    best_value = val_r;
                    best_lambda = lam_r.clone();
                    lambda = lam_r;
                }
            }
            let gap = certificate_gap(structure, l, params, &best_lambda, best_value)?;
            if gap <= CERTIFICATE_TOL * 0.1 {
                return Ok(OracleResult {
                    lambda_star: SamplingWeights::new(best_lambda)?,
                    d_star: best_value,
                    iterations: t,
                    certificate_gap: gap,
                });
            }
        }
    }
    let (lam_r, val_r) = refine_primal_dual(&evaluator, structure, l, &best_lambda, best_value);
    if val_r > best_value {
        best_value = val_r;
        best_lambda = lam_r;
    }
    let gap = certificate_gap(structure, l, params, &best_lambda, best_value)?;
    if gap > CERTIFICATE_TOL * (1.0 + best_value.abs()) {
        return Err(Error::NonConvergence { gap, iterations });
    }
    Ok(OracleResult {
        lambda_star: SamplingWeights::new(best_lambda)?,
        d_star: best_value,
        iterations,
        certificate_gap: gap,
    })
}

/// Primal-dual alternation: fit the piece mixture at the current point,
/// maximise the smooth mixture objective, and keep the maximiser whenever it
/// improves the min over pieces. Escapes the zigzag of plain supergradient
/// steps at equalisation kinks.
fn refine_primal_dual(
    evaluator: &crate::hypotheses::AlternativeEvaluator<'_>,
    structure: &HypothesisStructure,
    l: usize,
    lambda: &[f64],
    value: f64,
) -> (Vec<f64>, f64) {
    let mut lam = lambda.to_vec();
    let mut val = value;
    for _ in 0..6 {
        let eval = eval_pieces(evaluator, structure, l, &lam);
        let tol = 1e-7 + 1e-3 * eval.value.abs();
        let active: Vec<usize> = (0..eval.piece_values.len())
            .filter(|&i| eval.piece_values[i] <= eval.value + tol)
            .collect();
        let grads: Vec<&Vec<f64>> = active.iter().map(|&i| &eval.piece_grads[i]).collect();
        let mu = fit_piece_mixture(&grads, lam.len(), 600);
        let active_alts: Vec<usize> = active.iter().map(|&i| eval.alternatives[i]).collect();
        let (_, lam_dual) = maximize_mixture(evaluator, &active_alts, &mu, &lam, 400);
        let val_dual = evaluator.value(&lam_dual);
        if val_dual > val + 1e-15 {
            val = val_dual;
            lam = lam_dual;
        } else {
            break;
        }
    }
    (lam, val)
}

/// Primal-dual certificate: fit a mixture over the active pieces by
/// minimising the stationarity residual, then maximise the (smooth, concave)
/// mixture objective over the simplex to obtain an upper bound on the
/// max-min value.
fn certificate_gap(
    structure: &HypothesisStructure,
    l: usize,
    params: &NaturalParamVector,
    lambda: &[f64],
    value: f64,
) -> Result<f64> {
    let fast = certificate_gap_with_effort(structure, l, params, lambda, value, 200, 120)?;
    if fast <= CERTIFICATE_TOL * 0.5 * (1.0 + value.abs()) {
        return Ok(fast);
    }
    let thorough = certificate_gap_with_effort(structure, l, params, lambda, value, 3000, 1500)?;
    Ok(fast.min(thorough))
}

fn certificate_gap_with_effort(
    structure: &HypothesisStructure,
    l: usize,
    params: &NaturalParamVector,
    lambda: &[f64],
    value: f64,
    qp_iters: usize,
    ascent_iters: usize,
) -> Result<f64> {
    let evaluator = structure.alternative_evaluator(l, params)?;
    let eval = eval_pieces(&evaluator, structure, l, lambda);
    let tol = 1e-7 + 1e-4 * eval.value.abs();
    let active: Vec<usize> = (0..eval.piece_values.len())
        .filter(|&i| eval.piece_values[i] <= eval.value + tol)
        .collect();
    let grads: Vec<&Vec<f64>> = active.iter().map(|&i| &eval.piece_grads[i]).collect();
    let active_alts: Vec<usize> = active.iter().map(|&i| eval.alternatives[i]).collect();

    // Any mixture yields a valid upper bound, so take the best across the
    // fitted one and the structure's exact saddle weights.
    let mut candidates = vec![fit_piece_mixture(&grads, lambda.len(), qp_iters)];
    if let Some(mu) = structural_dual_weights(structure, &eval, &active, &active_alts) {
        candidates.push(mu);
    }
    let mut gap = f64::INFINITY;
    for mu in &candidates {
        let (ub, _) = maximize_mixture(&evaluator, &active_alts, mu, lambda, ascent_iters);
        gap = gap.min((ub - value).max(0.0));
    }
    Ok(gap)
}

/// Exact saddle mixtures where the structure admits them: uniform over the
/// exchangeable odd-arm pieces; inverse challenger divergence for best-arm
/// (the stationarity condition `mu_j D(eta_j || eta~_j) = const` paired with
/// the equalised leader component).
fn structural_dual_weights(
    structure: &HypothesisStructure,
    eval: &PieceEval,
    active: &[usize],
    active_alts: &[usize],
) -> Option<Vec<f64>> {
    if active.is_empty() {
        return None;
    }
    match structure.kind() {
        HypothesisKind::OddArm => Some(vec![1.0 / active.len() as f64; active.len()]),
        HypothesisKind::BestArm { .. } => {
            let mut mu: Vec<f64> = active
                .iter()
                .zip(active_alts)
                .map(|(&i, &m)| {
                    let dj = eval.piece_grads[i][m].max(1e-300);
                    1.0 / dj
                })
                .collect();
            let total: f64 = mu.iter().sum();
            if !(total > 0.0) || !total.is_finite() {
                return None;
            }
            mu.iter_mut().for_each(|x| *x /= total);
            Some(mu)
        }
    }
}

/// Least-squares fit of mixture weights over the active-piece gradients so
/// that the combined gradient is as close to a constant vector as possible
/// (interior stationarity). Tiny projected-gradient solve of a convex QP.
fn fit_piece_mixture(grads: &[&Vec<f64>], k: usize, iters: usize) -> Vec<f64> {
    let p = grads.len();
    if p == 1 {
        return vec![1.0];
    }
    let centered: Vec<Vec<f64>> = grads
        .iter()
        .map(|g| {
            let mean = g.iter().sum::<f64>() / k as f64;
            g.iter().map(|x| x - mean).collect()
        })
        .collect();
    let objective_grad = |mu: &[f64]| -> Vec<f64> {
        let mut combined = vec![0.0; k];
        for (gi, g) in centered.iter().enumerate() {
            for j in 0..k {
                combined[j] += mu[gi] * g[j];
            }
        }
        (0..p)
            .map(|gi| 2.0 * (0..k).map(|j| centered[gi][j] * combined[j]).sum::<f64>())
            .collect()
    };
    let lipschitz: f64 = centered.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>() * 2.0;
    let step = 1.0 / lipschitz.max(1e-12);
    let mut mu = vec![1.0 / p as f64; p];
    for _ in 0..iters {
        let g = objective_grad(&mu);
        let trial: Vec<f64> = (0..p).map(|i| mu[i] - step * g[i]).collect();
        mu = project_simplex(&trial);
    }
    mu
}

/// Maximise `sum_m mu_m F_m(lambda)` over the simplex (smooth and concave)
/// with projected gradient ascent and backtracking, starting from the primal
/// point.
fn maximize_mixture(
    evaluator: &crate::hypotheses::AlternativeEvaluator<'_>,
    alternatives: &[usize],
    mu: &[f64],
    start: &[f64],
    iters: usize,
) -> (f64, Vec<f64>) {
    let k = start.len();
    let value_at = |lam: &[f64]| -> f64 {
        let mut v = 0.0;
        for (idx, &m) in alternatives.iter().enumerate() {
            if mu[idx] > 0.0 {
                v += mu[idx] * evaluator.piece_value(m, lam);
            }
        }
        v
    };
    let mut pg = vec![0.0; k];
    let mut lam = start.to_vec();
    let mut value = value_at(&lam);
    let mut step = 1.0;
    for _ in 0..iters {
        let mut g = vec![0.0; k];
        for (idx, &m) in alternatives.iter().enumerate() {
            if mu[idx] > 0.0 {
                evaluator.piece_gradient(m, &lam, &mut pg);
                for j in 0..k {
                    g[j] += mu[idx] * pg[j];
                }
            }
        }
        let mut improved = false;
        let mut s = step;
        for _ in 0..30 {
            let trial: Vec<f64> = (0..k).map(|j| lam[j] + s * g[j]).collect();
            let proj = project_simplex(&trial);
            let v = value_at(&proj);
            if v > value + 1e-16 {
                let moved: f64 = proj.iter().zip(&lam).map(|(a, b)| (a - b).abs()).sum();
                lam = proj;
                value = v;
                step = s * 2.0;
                improved = true;
                if moved < 1e-13 {
                    return (value, lam);
                }
                break;
            }
            s *= 0.5;
            if s < 1e-14 {
                break;
            }
        }
        if !improved {
            break;
        }
    }
    (value, lam)
}
