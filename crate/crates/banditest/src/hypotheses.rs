//! Structured hypothesis classes over K-armed parameter tuples.
//!
//! A [`HypothesisStructure`] describes M pairwise-disjoint, relatively open
//! parameter sets. Two kinds are implemented:
//!
//! * **Odd arm**: exactly one arm has parameter `theta`, every other arm
//!   shares a common `theta' != theta`; hypothesis m says arm m is the odd
//!   one (requires K >= 3 for disjointness).
//! * **Best arm**: hypothesis m says `c * eta_m > c * eta_j` for all other
//!   arms j (scalar natural parameter; `c` is a nonzero direction).
//!
//! On top of membership the module provides the two workhorse computations
//! of the test statistics: constrained maximum likelihood within a
//! hypothesis set, and the weighted nearest-alternative infimum over the
//! union of all other hypothesis sets.

use crate::error::{Error, Result};
use crate::expfam::{ExpFamilyModel, ExpectationParam, NaturalParam, ParamVec};

/// Relative separation below which two parameters count as equal in
/// membership tests; the hypothesis sets are relatively open, so touching
/// the boundary counts as a violation.
const MEMBERSHIP_TOL: f64 = 1e-12;

/// Relative step used to nudge an unattained-supremum ML point into the
/// open hypothesis set. The induced objective deficit is second order in
/// this step, far below any delta_n = 1/n in play.
const PERTURB_STEP: f64 = 1e-6;

/// The hypothesis class variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HypothesisKind {
    OddArm,
    /// Scalar direction; hypothesis m asserts `c * eta_m` is strictly largest.
    BestArm { direction: f64 },
}

/// Per-arm tuple of natural parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalParamVector {
    params: Vec<NaturalParam>,
}

impl NaturalParamVector {
    pub fn new(params: Vec<NaturalParam>) -> Self {
        NaturalParamVector { params }
    }

    pub fn arm(&self, i: usize) -> &NaturalParam {
        &self.params[i]
    }

    pub fn arms(&self) -> &[NaturalParam] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// A K-armed hypothesis structure over a shared exponential-family model.
#[derive(Debug, Clone, Copy)]
pub struct HypothesisStructure {
    kind: HypothesisKind,
    arm_count: usize,
    model: ExpFamilyModel,
}

impl HypothesisStructure {
    pub fn new(kind: HypothesisKind, arm_count: usize, model: ExpFamilyModel) -> Result<Self> {
        match kind {
            HypothesisKind::OddArm => {
                if arm_count < 3 {
                    return Err(Error::Config(format!(
                        "odd-arm structure needs at least 3 arms for disjoint hypotheses, got {arm_count}"
                    )));
                }
            }
            HypothesisKind::BestArm { direction } => {
                if arm_count < 2 {
                    return Err(Error::Config(format!("best-arm structure needs at least 2 arms, got {arm_count}")));
                }
                if direction == 0.0 || !direction.is_finite() {
                    return Err(Error::Config("best-arm direction must be finite and nonzero".into()));
                }
                if model.dim() != 1 {
                    return Err(Error::Unsupported(
                        "best-arm hypotheses are implemented for scalar natural parameters only".into(),
                    ));
                }
            }
        }
        Ok(HypothesisStructure { kind, arm_count, model })
    }

    pub fn kind(&self) -> HypothesisKind {
        self.kind
    }

    pub fn arm_count(&self) -> usize {
        self.arm_count
    }

    /// Number of hypotheses; equals the arm count for both kinds.
    pub fn hypothesis_count(&self) -> usize {
        self.arm_count
    }

    pub fn model(&self) -> &ExpFamilyModel {
        &self.model
    }

    fn check_index(&self, m: usize) -> Result<()> {
        if m < self.arm_count {
            Ok(())
        } else {
            Err(Error::Domain(format!("hypothesis index {m} out of range 0..{}", self.arm_count)))
        }
    }

    /// Scale used to make equality/strictness tolerances relative.
    fn scale_of(params: &NaturalParamVector) -> f64 {
        params
            .arms()
            .iter()
            .flat_map(|p| p.as_slice().iter().map(|v| v.abs()))
            .fold(1.0, f64::max)
    }

    /// Strict membership. Equality within tolerance counts as a violation
    /// because the sets are relatively open.
    pub fn contains(&self, params: &NaturalParamVector, m: usize) -> bool {
        if m >= self.arm_count
            || params.len() != self.arm_count
            || params.arms().iter().any(|p| !self.model.contains_natural(p))
        {
            return false;
        }
        let tol = MEMBERSHIP_TOL * Self::scale_of(params);
        match self.kind {
            HypothesisKind::OddArm => {
                let theta = params.arm(m);
                let mut common: Option<&NaturalParam> = None;
                for (j, p) in params.arms().iter().enumerate() {
                    if j == m {
                        continue;
                    }
                    match common {
                        None => common = Some(p),
                        Some(c) => {
                            if c.linf_dist(p) > tol {
                                return false;
                            }
                        }
                    }
                }
                theta.linf_dist(common.expect("K >= 3")) > tol
            }
            HypothesisKind::BestArm { direction } => {
                let tm = direction * params.arm(m).get(0);
                params
                    .arms()
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != m)
                    .all(|(_, p)| tm - direction * p.get(0) > tol)
            }
        }
    }

    /// Weighted pooled expectation parameter of the arms listed in `members`
    /// (skipping zero weights). Errors if the total weight vanishes.
    fn pooled_expectation(
        &self,
        members: &[usize],
        w: &[f64],
        kappa_hat: &[ExpectationParam],
    ) -> Result<ExpectationParam> {
        let d = self.model.dim();
        let mut acc = ParamVec::zeros(d);
        let mut total = 0.0;
        for &j in members {
            if w[j] > 0.0 {
                acc = acc.axpy(w[j], &kappa_hat[j]);
                total += w[j];
            }
        }
        if total <= 0.0 {
            return Err(Error::DegenerateWeights(format!("pooled group {members:?} has zero total weight")));
        }
        Ok(acc.scale(1.0 / total))
    }

    /// Natural parameter achieving (to within a tiny deficit) the per-arm
    /// dual value at `kappa`, tolerating boundary points of the discrete
    /// families.
    fn natural_at(&self, kappa: &ExpectationParam) -> Result<NaturalParam> {
        self.model.natural_for_closure(kappa)
    }

    /// Constrained maximum-likelihood estimate under hypothesis m: the
    /// maximiser of `sum_i w_i (eta_i^T kappa_hat_i - A(eta_i))` over the
    /// hypothesis set, returned as a member of the *open* set (an
    /// unattained supremum is approached by a relative perturbation whose
    /// objective deficit is second order).
    ///
    /// Arms with zero weight do not affect the objective; their entries are
    /// filled with the family's reference parameter where the structure
    /// leaves them free.
    pub fn constrained_ml(
        &self,
        m: usize,
        w: &[f64],
        kappa_hat: &[ExpectationParam],
    ) -> Result<NaturalParamVector> {
        self.check_index(m)?;
        if w.len() != self.arm_count || kappa_hat.len() != self.arm_count {
            return Err(Error::Domain("weights and parameter estimates must cover every arm".into()));
        }
        if w.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::Domain("weights must be nonnegative and finite".into()));
        }
        match self.kind {
            HypothesisKind::OddArm => self.odd_arm_ml(m, w, kappa_hat),
            HypothesisKind::BestArm { direction } => self.best_arm_ml(m, direction, w, kappa_hat),
        }
    }

    fn odd_arm_ml(&self, m: usize, w: &[f64], kappa_hat: &[ExpectationParam]) -> Result<NaturalParamVector> {
        let others: Vec<usize> = (0..self.arm_count).filter(|&j| j != m).collect();
        let pooled = self.pooled_expectation(&others, w, kappa_hat)?;
        let theta_prime = self.natural_at(&pooled)?;
        let mut theta = if w[m] > 0.0 {
            self.natural_at(&kappa_hat[m])?
        } else {
            // Unconstrained direction; any value distinct from theta' attains
            // the supremum.
            self.model.reference_natural()
        };
        // The open set excludes theta == theta'; step away until distinct.
        let scale = theta.linf_dist(&ParamVec::zeros(theta.dim())).max(1.0);
        let mut guard = 0;
        while theta.linf_dist(&theta_prime) <= MEMBERSHIP_TOL * scale.max(1.0) {
            let step = PERTURB_STEP * scale * (guard + 1) as f64;
            let mut t = theta;
            t.set(0, t.get(0) + step);
            if !self.model.contains_natural(&t) {
                t = theta;
                t.set(0, t.get(0) - step);
            }
            theta = t;
            guard += 1;
            if guard > 64 {
                return Err(Error::Domain("failed to separate odd parameter from pooled parameter".into()));
            }
        }
        let params = (0..self.arm_count)
            .map(|i| if i == m { theta } else { theta_prime })
            .collect();
        Ok(NaturalParamVector::new(params))
    }

    /// Pool-adjacent-violators on the scalar projection: arm m is pooled
    /// with the violating arms at their weighted expectation mean until the
    /// pooled value clears every remaining arm.
    fn best_arm_ml(
        &self,
        m: usize,
        direction: f64,
        w: &[f64],
        kappa_hat: &[ExpectationParam],
    ) -> Result<NaturalParamVector> {
        // Scalar family: the projection c*eta is monotone in kappa with the
        // sign of c, so ordering constraints transfer to kappa space.
        let sign = direction.signum();
        let kref = self.model.reference_expectation();
        let k_of = |j: usize| if w[j] > 0.0 { kappa_hat[j] } else { kref };
        let proj = |k: &ExpectationParam| sign * k.get(0);

        let mut pool: Vec<usize> = vec![m];
        let mut pooled = if w[m] > 0.0 {
            kappa_hat[m]
        } else {
            // Zero-weight leader: pooling it costs nothing, so the optimum
            // only needs the remaining arms left in place; start from the
            // largest candidate so the loop below terminates immediately.
            let top = (0..self.arm_count)
                .filter(|&j| j != m)
                .max_by(|&a, &b| proj(&k_of(a)).partial_cmp(&proj(&k_of(b))).unwrap())
                .expect("K >= 2");
            k_of(top)
        };
        loop {
            let viol = (0..self.arm_count)
                .filter(|j| !pool.contains(j))
                .filter(|&j| proj(&k_of(j)) > proj(&pooled))
                .max_by(|&a, &b| proj(&k_of(a)).partial_cmp(&proj(&k_of(b))).unwrap());
            match viol {
                None => break,
                Some(j) => {
                    pool.push(j);
                    let total_w: f64 = pool.iter().map(|&i| w[i]).sum();
                    pooled = if total_w > 0.0 {
                        self.pooled_expectation(&pool, w, kappa_hat)?
                    } else {
                        // All pooled members weightless: place them at the
                        // current frontier value.
                        k_of(j)
                    };
                }
            }
        }

        let eta_pooled = self.natural_at(&pooled)?;
        let mut params: Vec<NaturalParam> = (0..self.arm_count)
            .map(|j| if pool.contains(&j) { Ok(eta_pooled) } else { self.natural_at(&k_of(j)) })
            .collect::<Result<_>>()?;

        // Ties on the boundary: lift arm m until strictly best.
        let scale = params.iter().map(|p| p.get(0).abs()).fold(1.0, f64::max);
        let mut guard = 0;
        loop {
            let tm = sign * params[m].get(0);
            let runner_up = (0..self.arm_count)
                .filter(|&j| j != m)
                .map(|j| sign * params[j].get(0))
                .fold(f64::NEG_INFINITY, f64::max);
            if tm - runner_up > MEMBERSHIP_TOL * scale {
                break;
            }
            let step = PERTURB_STEP * scale * (guard + 1) as f64;
            let mut t = params[m];
            t.set(0, t.get(0) + sign * step);
            if !self.model.contains_natural(&t) {
                // Domain capped in the winning direction; push the rest down instead.
                for (j, p) in params.iter_mut().enumerate() {
                    if j != m {
                        p.set(0, p.get(0) - sign * step);
                    }
                }
            } else {
                params[m] = t;
            }
            guard += 1;
            if guard > 64 {
                return Err(Error::Domain("failed to separate best arm from runner-up".into()));
            }
        }
        Ok(NaturalParamVector::new(params))
    }

    /// `F(lambda, eta) = inf over the union of all other hypothesis sets of
    /// sum_i lambda_i D(eta_i || eta_i')`, together with the (near-)
    /// minimising configuration.
    ///
    /// Odd arm: for each alternative m the pooled group {l} U {j != l, m}
    /// collapses to its weighted expectation mixture while arm m moves for
    /// free. Best arm: for each challenger j, arms l and j pool at their
    /// weighted expectation midpoint.
    pub fn weighted_alternative_inf(
        &self,
        l: usize,
        lambda: &[f64],
        params: &NaturalParamVector,
    ) -> Result<(f64, NaturalParamVector)> {
        self.check_index(l)?;
        if lambda.len() != self.arm_count || params.len() != self.arm_count {
            return Err(Error::Domain("lambda and parameters must cover every arm".into()));
        }
        let eval = AlternativeEvaluator::new(self, l, params)?;
        let mut best_m = usize::MAX;
        let mut best_v = f64::INFINITY;
        for m in 0..self.arm_count {
            if m == l {
                continue;
            }
            let value = eval.piece_value(m, lambda);
            if value < best_v {
                best_v = value;
                best_m = m;
            }
        }
        eval.piece_minimizer(best_m, lambda)
    }

    /// Evaluator with per-solve precomputation; the entry point for oracle
    /// loops that probe many lambda values against one configuration.
    pub(crate) fn alternative_evaluator<'a>(
        &'a self,
        l: usize,
        params: &'a NaturalParamVector,
    ) -> Result<AlternativeEvaluator<'a>> {
        AlternativeEvaluator::new(self, l, params)
    }

    /// The weighted ML objective `sum_i w_i (eta_i^T kappa_hat_i - A(eta_i))`
    /// evaluated at a configuration, skipping zero-weight arms.
    pub fn weighted_objective(
        &self,
        w: &[f64],
        kappa_hat: &[ExpectationParam],
        params: &NaturalParamVector,
    ) -> f64 {
        let model = &self.model;
        let mut s = 0.0;
        for i in 0..self.arm_count {
            if w[i] > 0.0 {
                let eta = params.arm(i);
                s += w[i] * (eta.dot(&kappa_hat[i]) - model.log_partition_unchecked(eta));
            }
        }
        s
    }
}

/// Allocation-free evaluation of the per-alternative infima against a fixed
/// configuration, with the dual parameters converted once up front.
pub(crate) struct AlternativeEvaluator<'a> {
    structure: &'a HypothesisStructure,
    l: usize,
    params: &'a NaturalParamVector,
    kappas: Vec<ExpectationParam>,
}

impl<'a> AlternativeEvaluator<'a> {
    fn new(structure: &'a HypothesisStructure, l: usize, params: &'a NaturalParamVector) -> Result<Self> {
        let model = structure.model();
        let kappas = params
            .arms()
            .iter()
            .map(|p| model.to_expectation(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(AlternativeEvaluator { structure, l, params, kappas })
    }

    /// Mixture parameter of piece m (the inner minimiser's shared value).
    fn piece_mixture(&self, m: usize, lambda: &[f64]) -> Option<ExpectationParam> {
        let k = self.structure.arm_count;
        let model = &self.structure.model;
        match self.structure.kind {
            HypothesisKind::OddArm => {
                let mut acc = ParamVec::zeros(model.dim());
                let mut total = 0.0;
                for j in 0..k {
                    if j != m && lambda[j] > 0.0 {
                        acc = acc.axpy(lambda[j], &self.kappas[j]);
                        total += lambda[j];
                    }
                }
                if total <= 0.0 {
                    None
                } else {
                    Some(acc.scale(1.0 / total))
                }
            }
            HypothesisKind::BestArm { .. } => {
                let (ll, lm) = (lambda[self.l], lambda[m]);
                if ll + lm <= 0.0 {
                    None
                } else {
                    Some(
                        self.kappas[self.l]
                            .scale(ll / (ll + lm))
                            .axpy(lm / (ll + lm), &self.kappas[m]),
                    )
                }
            }
        }
    }

    /// Value of piece m at the given weights.
    pub(crate) fn piece_value(&self, m: usize, lambda: &[f64]) -> f64 {
        let model = &self.structure.model;
        let mixed = match self.piece_mixture(m, lambda) {
            Some(x) => x,
            None => return 0.0,
        };
        let eta_tilde = match model.to_natural(&mixed) {
            Ok(e) => e,
            Err(_) => return 0.0,
        };
        let k = self.structure.arm_count;
        match self.structure.kind {
            HypothesisKind::OddArm => {
                let mut value = 0.0;
                for j in 0..k {
                    if j != m && lambda[j] > 0.0 {
                        value += lambda[j] * model.kl_unchecked(self.params.arm(j), &eta_tilde);
                    }
                }
                value
            }
            HypothesisKind::BestArm { .. } => {
                lambda[self.l] * model.kl_unchecked(self.params.arm(self.l), &eta_tilde)
                    + lambda[m] * model.kl_unchecked(self.params.arm(m), &eta_tilde)
            }
        }
    }

    /// Minimum over all pieces.
    pub(crate) fn value(&self, lambda: &[f64]) -> f64 {
        let mut v = f64::INFINITY;
        for m in 0..self.structure.arm_count {
            if m != self.l {
                v = v.min(self.piece_value(m, lambda));
            }
        }
        v
    }

    /// Value plus the full minimising configuration of piece m.
    pub(crate) fn piece_minimizer(&self, m: usize, lambda: &[f64]) -> Result<(f64, NaturalParamVector)> {
        let model = &self.structure.model;
        let k = self.structure.arm_count;
        let mixed = match self.piece_mixture(m, lambda) {
            Some(x) => x,
            None => return Ok((0.0, self.params.clone())),
        };
        let eta_tilde = model.to_natural(&mixed)?;
        let value = self.piece_value(m, lambda);
        let alt: Vec<NaturalParam> = match self.structure.kind {
            HypothesisKind::OddArm => (0..k)
                .map(|i| if i == m { *self.params.arm(i) } else { eta_tilde })
                .collect(),
            HypothesisKind::BestArm { .. } => (0..k)
                .map(|i| if i == self.l || i == m { eta_tilde } else { *self.params.arm(i) })
                .collect(),
        };
        Ok((value, NaturalParamVector::new(alt)))
    }

    /// Envelope-theorem gradient of piece m with respect to lambda, written
    /// into `out`.
    pub(crate) fn piece_gradient(&self, m: usize, lambda: &[f64], out: &mut [f64]) {
        let model = &self.structure.model;
        let k = self.structure.arm_count;
        out.iter_mut().for_each(|x| *x = 0.0);
        let mixed = match self.piece_mixture(m, lambda) {
            Some(x) => x,
            None => return,
        };
        let eta_tilde = match model.to_natural(&mixed) {
            Ok(e) => e,
            Err(_) => return,
        };
        match self.structure.kind {
            HypothesisKind::OddArm => {
                for j in 0..k {
                    if j != m {
                        out[j] = model.kl_unchecked(self.params.arm(j), &eta_tilde);
                    }
                }
            }
            HypothesisKind::BestArm { .. } => {
                out[self.l] = model.kl_unchecked(self.params.arm(self.l), &eta_tilde);
                out[m] = model.kl_unchecked(self.params.arm(m), &eta_tilde);
            }
        }
    }
}
