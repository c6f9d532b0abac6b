//! Vector exponential-family models.
//!
//! A family member has density (or mass function)
//! `f(x | eta) = h(x) exp(eta^T T(x) - A(eta))` with natural parameter `eta`
//! ranging over an open convex domain. The module provides the log-partition
//! function `A`, the natural/expectation duality `kappa = grad A` and
//! `eta = grad F`, the convex conjugate `F`, KL divergence in three
//! algebraically equivalent forms, sufficient statistics and sampling.
//!
//! Five concrete families are implemented: Gaussian with known variance,
//! Gaussian with known mean, Gaussian with both mean and variance unknown
//! (a genuinely two-dimensional natural parameter), Poisson and Bernoulli.

use rand::Rng;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::numeric::integrate_gl64;

/// Maximum natural-parameter dimension across the implemented families.
pub const MAX_DIM: usize = 2;

/// Boundary tolerance for domain membership tests.
pub const DOMAIN_TOL: f64 = 1e-12;

/// Fixed-capacity parameter vector (dimension 1 or 2). `Copy`, so parameter
/// values move freely through the hot loops without allocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamVec {
    data: [f64; MAX_DIM],
    dim: usize,
}

impl ParamVec {
    pub fn scalar(v: f64) -> Self {
        ParamVec { data: [v, 0.0], dim: 1 }
    }

    pub fn pair(a: f64, b: f64) -> Self {
        ParamVec { data: [a, b], dim: 2 }
    }

    pub fn from_slice(s: &[f64]) -> Result<Self> {
        match s.len() {
            1 => Ok(Self::scalar(s[0])),
            2 => Ok(Self::pair(s[0], s[1])),
            n => Err(Error::Domain(format!("parameter dimension {n} not in {{1, 2}}"))),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVec { data: [0.0; MAX_DIM], dim }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data[..self.dim]
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.data[i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: f64) {
        self.data[i] = v;
    }

    #[inline]
    pub fn dot(&self, other: &ParamVec) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        let mut s = 0.0;
        for i in 0..self.dim {
            s += self.data[i] * other.data[i];
        }
        s
    }

    #[inline]
    pub fn add_assign(&mut self, other: &ParamVec) {
        debug_assert_eq!(self.dim, other.dim);
        for i in 0..self.dim {
            self.data[i] += other.data[i];
        }
    }

    #[inline]
    pub fn scale(&self, c: f64) -> ParamVec {
        let mut out = *self;
        for i in 0..self.dim {
            out.data[i] *= c;
        }
        out
    }

    /// Componentwise `self + c * other`.
    #[inline]
    pub fn axpy(&self, c: f64, other: &ParamVec) -> ParamVec {
        debug_assert_eq!(self.dim, other.dim);
        let mut out = *self;
        for i in 0..self.dim {
            out.data[i] += c * other.data[i];
        }
        out
    }

    pub fn linf_dist(&self, other: &ParamVec) -> f64 {
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Natural (canonical) parameter of a family member.
pub type NaturalParam = ParamVec;
/// Expectation parameter, the mean of the sufficient statistic.
pub type ExpectationParam = ParamVec;
/// Value of a sufficient statistic `T(x)`.
pub type SuffStat = ParamVec;

/// Which concrete exponential family a model instance belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FamilyKind {
    /// Gaussian with known variance: `eta = mu / sigma2`, `T(x) = x`.
    GaussianKnownVariance { sigma2: f64 },
    /// Gaussian with known mean: `eta = -1/(2 sigma2) < 0`, `T(x) = (x - mu)^2`.
    GaussianKnownMean { mu: f64 },
    /// Gaussian, mean and variance unknown: `eta = (mu/sigma2, -1/(2 sigma2))`,
    /// `T(x) = (x, x^2)`.
    GaussianBothUnknown,
    /// Poisson: `eta = log rate`, `T(x) = x`.
    Poisson,
    /// Bernoulli: `eta = logit p`, `T(x) = x`.
    Bernoulli,
}

/// An immutable exponential-family model. Safe to share across threads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpFamilyModel {
    kind: FamilyKind,
}

impl ExpFamilyModel {
    pub fn new(kind: FamilyKind) -> Result<Self> {
        if let FamilyKind::GaussianKnownVariance { sigma2 } = kind {
            if !(sigma2 > 0.0) {
                return Err(Error::Domain(format!("sigma2 must be positive, got {sigma2}")));
            }
        }
        Ok(ExpFamilyModel { kind })
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    /// Dimension of the natural parameter.
    pub fn dim(&self) -> usize {
        match self.kind {
            FamilyKind::GaussianBothUnknown => 2,
            _ => 1,
        }
    }

    /// Membership test for the open natural domain.
    pub fn contains_natural(&self, eta: &NaturalParam) -> bool {
        if eta.dim() != self.dim() || eta.as_slice().iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self.kind {
            FamilyKind::GaussianKnownVariance { .. } | FamilyKind::Poisson | FamilyKind::Bernoulli => true,
            FamilyKind::GaussianKnownMean { .. } => eta.get(0) < -DOMAIN_TOL,
            FamilyKind::GaussianBothUnknown => eta.get(1) < -DOMAIN_TOL,
        }
    }

    /// Membership test for the open dual domain (image of the natural domain
    /// under `grad A`).
    pub fn contains_expectation(&self, kappa: &ExpectationParam) -> bool {
        if kappa.dim() != self.dim() || kappa.as_slice().iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self.kind {
            FamilyKind::GaussianKnownVariance { .. } => true,
            FamilyKind::GaussianKnownMean { .. } => kappa.get(0) > DOMAIN_TOL,
            FamilyKind::GaussianBothUnknown => kappa.get(1) - kappa.get(0) * kappa.get(0) > DOMAIN_TOL,
            FamilyKind::Poisson => kappa.get(0) > DOMAIN_TOL,
            FamilyKind::Bernoulli => kappa.get(0) > DOMAIN_TOL && kappa.get(0) < 1.0 - DOMAIN_TOL,
        }
    }

    fn check_natural(&self, eta: &NaturalParam) -> Result<()> {
        if self.contains_natural(eta) {
            Ok(())
        } else {
            Err(Error::Domain(format!("natural parameter {:?} outside domain of {:?}", eta.as_slice(), self.kind)))
        }
    }

    fn check_expectation(&self, kappa: &ExpectationParam) -> Result<()> {
        if self.contains_expectation(kappa) {
            Ok(())
        } else {
            Err(Error::Domain(format!("expectation parameter {:?} outside dual domain of {:?}", kappa.as_slice(), self.kind)))
        }
    }

    /// Log-partition function `A(eta)`.
    pub fn log_partition(&self, eta: &NaturalParam) -> Result<f64> {
        self.check_natural(eta)?;
        Ok(self.log_partition_unchecked(eta))
    }

    #[inline]
    pub(crate) fn log_partition_unchecked(&self, eta: &NaturalParam) -> f64 {
        match self.kind {
            FamilyKind::GaussianKnownVariance { sigma2 } => 0.5 * sigma2 * eta.get(0) * eta.get(0),
            FamilyKind::GaussianKnownMean { .. } => -0.5 * (-2.0 * eta.get(0)).ln(),
            FamilyKind::GaussianBothUnknown => {
                let (e1, e2) = (eta.get(0), eta.get(1));
                -e1 * e1 / (4.0 * e2) - 0.5 * (-2.0 * e2).ln()
            }
            FamilyKind::Poisson => eta.get(0).exp(),
            // softplus, stable on both sides
            FamilyKind::Bernoulli => {
                let e = eta.get(0);
                if e > 0.0 {
                    e + (-e).exp().ln_1p()
                } else {
                    e.exp().ln_1p()
                }
            }
        }
    }

    /// Dual map `kappa(eta) = grad A(eta)`.
    pub fn to_expectation(&self, eta: &NaturalParam) -> Result<ExpectationParam> {
        self.check_natural(eta)?;
        Ok(self.to_expectation_unchecked(eta))
    }

    #[inline]
    pub(crate) fn to_expectation_unchecked(&self, eta: &NaturalParam) -> ExpectationParam {
        match self.kind {
            FamilyKind::GaussianKnownVariance { sigma2 } => ParamVec::scalar(sigma2 * eta.get(0)),
            FamilyKind::GaussianKnownMean { .. } => ParamVec::scalar(-0.5 / eta.get(0)),
            FamilyKind::GaussianBothUnknown => {
                let (e1, e2) = (eta.get(0), eta.get(1));
                let mu = -e1 / (2.0 * e2);
                let var = -0.5 / e2;
                ParamVec::pair(mu, mu * mu + var)
            }
            FamilyKind::Poisson => ParamVec::scalar(eta.get(0).exp()),
            FamilyKind::Bernoulli => {
                let e = eta.get(0);
                ParamVec::scalar(1.0 / (1.0 + (-e).exp()))
            }
        }
    }

    /// Inverse dual map `eta(kappa) = grad F(kappa)`.
    pub fn to_natural(&self, kappa: &ExpectationParam) -> Result<NaturalParam> {
        self.check_expectation(kappa)?;
        Ok(match self.kind {
            FamilyKind::GaussianKnownVariance { sigma2 } => ParamVec::scalar(kappa.get(0) / sigma2),
            FamilyKind::GaussianKnownMean { .. } => ParamVec::scalar(-0.5 / kappa.get(0)),
            FamilyKind::GaussianBothUnknown => {
                let mu = kappa.get(0);
                let var = kappa.get(1) - mu * mu;
                ParamVec::pair(mu / var, -0.5 / var)
            }
            FamilyKind::Poisson => ParamVec::scalar(kappa.get(0).ln()),
            FamilyKind::Bernoulli => {
                let p = kappa.get(0);
                ParamVec::scalar((p / (1.0 - p)).ln())
            }
        })
    }

    /// Convex conjugate `F(kappa) = eta(kappa)^T kappa - A(eta(kappa))`.
    pub fn conjugate_dual(&self, kappa: &ExpectationParam) -> Result<f64> {
        let eta = self.to_natural(kappa)?;
        Ok(eta.dot(kappa) - self.log_partition_unchecked(&eta))
    }

    /// `F` extended to the closure of the dual domain. Finite on the boundary
    /// for the discrete families (Poisson at 0, Bernoulli at 0 and 1);
    /// `+inf` where the supremum genuinely diverges.
    pub fn conjugate_dual_closure(&self, kappa: &ExpectationParam) -> f64 {
        if self.contains_expectation(kappa) {
            let eta = self.to_natural(kappa).expect("interior point");
            return eta.dot(kappa) - self.log_partition_unchecked(&eta);
        }
        match self.kind {
            FamilyKind::Poisson if kappa.get(0).abs() <= DOMAIN_TOL => 0.0,
            FamilyKind::Bernoulli
                if kappa.get(0).abs() <= DOMAIN_TOL || (kappa.get(0) - 1.0).abs() <= DOMAIN_TOL =>
            {
                0.0
            }
            _ => f64::INFINITY,
        }
    }

    /// KL divergence `D(eta1 || eta2)`, evaluated through the family's
    /// simplified natural-parameter form. For the Gaussian variants the
    /// symbolic simplification avoids the catastrophic cancellation the
    /// literal form suffers when a parameter sits near the domain boundary
    /// (tiny variances produce natural parameters of order 1e11).
    pub fn kl(&self, eta1: &NaturalParam, eta2: &NaturalParam) -> Result<f64> {
        self.check_natural(eta1)?;
        self.check_natural(eta2)?;
        Ok(self.kl_unchecked(eta1, eta2))
    }

    #[inline]
    pub(crate) fn kl_unchecked(&self, eta1: &NaturalParam, eta2: &NaturalParam) -> f64 {
        let v = match self.kind {
            FamilyKind::GaussianKnownVariance { sigma2 } => {
                let d = eta1.get(0) - eta2.get(0);
                0.5 * sigma2 * d * d
            }
            FamilyKind::GaussianKnownMean { .. } => {
                // variance ratio r = v1/v2 = eta2/eta1
                let r = eta2.get(0) / eta1.get(0);
                0.5 * (r - 1.0 - r.ln())
            }
            FamilyKind::GaussianBothUnknown => {
                let v1 = -0.5 / eta1.get(1);
                let mu1 = eta1.get(0) * v1;
                let v2 = -0.5 / eta2.get(1);
                let mu2 = eta2.get(0) * v2;
                let r = v1 / v2;
                0.5 * (r + (mu1 - mu2) * (mu1 - mu2) / v2 - 1.0 - r.ln())
            }
            _ => self.kl_literal_natural(eta1, eta2),
        };
        v.max(0.0)
    }

    /// The literal natural-parameter expression
    /// `(eta1 - eta2)^T kappa1 - A(eta1) + A(eta2)`; cross-check route.
    pub fn kl_literal_natural(&self, eta1: &NaturalParam, eta2: &NaturalParam) -> f64 {
        let kappa1 = self.to_expectation_unchecked(eta1);
        let mut diff = *eta1;
        for i in 0..diff.dim() {
            diff.set(i, eta1.get(i) - eta2.get(i));
        }
        diff.dot(&kappa1) - self.log_partition_unchecked(eta1) + self.log_partition_unchecked(eta2)
    }

    /// KL via the expectation-parameter form:
    /// `(kappa2 - kappa1)^T eta2 + F(kappa1) - F(kappa2)`.
    pub fn kl_expectation_form(&self, eta1: &NaturalParam, eta2: &NaturalParam) -> Result<f64> {
        let k1 = self.to_expectation(eta1)?;
        let k2 = self.to_expectation(eta2)?;
        let mut diff = k2;
        for i in 0..diff.dim() {
            diff.set(i, k2.get(i) - k1.get(i));
        }
        Ok(diff.dot(eta2) + self.conjugate_dual(&k1)? - self.conjugate_dual(&k2)?)
    }

    /// KL via the Hessian-integral Taylor form, evaluated with 64-point
    /// Gauss-Legendre quadrature over the segment. Cross-check only; never on
    /// a hot path.
    pub fn kl_hessian_form(&self, eta1: &NaturalParam, eta2: &NaturalParam) -> Result<f64> {
        self.check_natural(eta1)?;
        self.check_natural(eta2)?;
        let d = self.dim();
        let mut delta = ParamVec::zeros(d);
        for i in 0..d {
            delta.set(i, eta2.get(i) - eta1.get(i));
        }
        // Integral remainder of the first-order Taylor expansion of A:
        // D = int_0^1 (1-t) delta^T Hess(A)(eta1 + t delta) delta dt.
        let quad = integrate_gl64(0.0, 1.0, |t| {
            let p = eta1.axpy(t, &delta);
            let h = self.hessian_log_partition(&p);
            let mut s = 0.0;
            for i in 0..d {
                for j in 0..d {
                    s += delta.get(i) * h[i][j] * delta.get(j);
                }
            }
            (1.0 - t) * s
        });
        Ok(quad)
    }

    /// Hessian of `A` at `eta`; equals the covariance of `T(x)`.
    pub fn hessian_log_partition(&self, eta: &NaturalParam) -> [[f64; MAX_DIM]; MAX_DIM] {
        let mut h = [[0.0; MAX_DIM]; MAX_DIM];
        match self.kind {
            FamilyKind::GaussianKnownVariance { sigma2 } => h[0][0] = sigma2,
            FamilyKind::GaussianKnownMean { .. } => {
                let e = eta.get(0);
                h[0][0] = 0.5 / (e * e);
            }
            FamilyKind::GaussianBothUnknown => {
                let (e1, e2) = (eta.get(0), eta.get(1));
                h[0][0] = -0.5 / e2;
                h[0][1] = 0.5 * e1 / (e2 * e2);
                h[1][0] = h[0][1];
                h[1][1] = -0.5 * e1 * e1 / (e2 * e2 * e2) + 0.5 / (e2 * e2);
            }
            FamilyKind::Poisson => h[0][0] = eta.get(0).exp(),
            FamilyKind::Bernoulli => {
                let p = 1.0 / (1.0 + (-eta.get(0)).exp());
                h[0][0] = p * (1.0 - p);
            }
        }
        h
    }

    /// Sufficient statistic `T(x)`.
    pub fn suff_stat(&self, x: f64) -> SuffStat {
        match self.kind {
            FamilyKind::GaussianKnownVariance { .. } | FamilyKind::Poisson | FamilyKind::Bernoulli => {
                ParamVec::scalar(x)
            }
            FamilyKind::GaussianKnownMean { mu } => ParamVec::scalar((x - mu) * (x - mu)),
            FamilyKind::GaussianBothUnknown => ParamVec::pair(x, x * x),
        }
    }

    /// Draw one observation from the member with natural parameter `eta`.
    pub fn sample<R: Rng + ?Sized>(&self, eta: &NaturalParam, rng: &mut R) -> Result<f64> {
        self.check_natural(eta)?;
        Ok(match self.kind {
            FamilyKind::GaussianKnownVariance { sigma2 } => {
                let z: f64 = rand_distr::StandardNormal.sample(rng);
                sigma2 * eta.get(0) + sigma2.sqrt() * z
            }
            FamilyKind::GaussianKnownMean { mu } => {
                let var = -0.5 / eta.get(0);
                let z: f64 = rand_distr::StandardNormal.sample(rng);
                mu + var.sqrt() * z
            }
            FamilyKind::GaussianBothUnknown => {
                let var = -0.5 / eta.get(1);
                let mu = eta.get(0) * var;
                let z: f64 = rand_distr::StandardNormal.sample(rng);
                mu + var.sqrt() * z
            }
            FamilyKind::Poisson => {
                let rate = eta.get(0).exp();
                rand_distr::Poisson::new(rate)
                    .map_err(|e| Error::Domain(format!("poisson rate: {e}")))?
                    .sample(rng)
            }
            FamilyKind::Bernoulli => {
                let p = 1.0 / (1.0 + (-eta.get(0)).exp());
                if rng.gen::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
        })
    }

    /// A default reference expectation parameter yielding a proper conjugate
    /// prior with unit pseudo-count. The single-pseudo-observation-at-zero
    /// choice is kept where it is proper; families whose normaliser would
    /// diverge there use the nearest canonical interior point instead.
    pub fn reference_expectation(&self) -> ExpectationParam {
        match self.kind {
            FamilyKind::GaussianKnownVariance { .. } => ParamVec::scalar(0.0),
            FamilyKind::GaussianKnownMean { .. } => ParamVec::scalar(1.0),
            FamilyKind::GaussianBothUnknown => ParamVec::pair(0.0, 1.0),
            FamilyKind::Poisson => ParamVec::scalar(1.0),
            FamilyKind::Bernoulli => ParamVec::scalar(0.5),
        }
    }

    /// Natural parameter of the reference point; used as a placeholder for
    /// arms whose weight is zero in a constrained ML problem.
    pub fn reference_natural(&self) -> NaturalParam {
        self.to_natural(&self.reference_expectation()).expect("reference point is interior")
    }

    /// Natural parameter achieving `F` on the closure within a tiny deficit,
    /// for dual points that may sit on the boundary of the dual domain.
    ///
    /// Discrete families reach their boundary with positive probability
    /// (all-zero or all-one samples); the dual value there is a finite
    /// limit, approached by a clamped natural parameter. The Gaussian
    /// variance families hit the boundary when an arm's empirical second
    /// moment is degenerate (a single observation); the supremum of the
    /// likelihood is infinite there, so the variance is floored instead —
    /// the resulting surrogate is large, which only delays stopping, and
    /// the state leaves the boundary at the next observation.
    pub(crate) fn natural_for_closure(&self, kappa: &ExpectationParam) -> Result<NaturalParam> {
        if self.contains_expectation(kappa) {
            return self.to_natural(kappa);
        }
        const CLAMP: f64 = 40.0;
        const VAR_FLOOR: f64 = 1e-12;
        match self.kind {
            FamilyKind::Poisson if kappa.get(0).abs() <= DOMAIN_TOL => Ok(ParamVec::scalar(-CLAMP)),
            FamilyKind::Bernoulli if kappa.get(0).abs() <= DOMAIN_TOL => Ok(ParamVec::scalar(-CLAMP)),
            FamilyKind::Bernoulli if (kappa.get(0) - 1.0).abs() <= DOMAIN_TOL => Ok(ParamVec::scalar(CLAMP)),
            FamilyKind::GaussianKnownMean { .. } if kappa.get(0) >= -DOMAIN_TOL => {
                self.to_natural(&ParamVec::scalar(kappa.get(0).max(0.0) + VAR_FLOOR))
            }
            FamilyKind::GaussianBothUnknown => {
                let mu = kappa.get(0);
                let floor = VAR_FLOOR * (1.0 + mu * mu);
                if kappa.get(1) - mu * mu >= -floor {
                    self.to_natural(&ParamVec::pair(mu, mu * mu + floor))
                } else {
                    Err(Error::Domain(format!(
                        "expectation parameter {:?} outside closure handling of {:?}",
                        kappa.as_slice(),
                        self.kind
                    )))
                }
            }
            _ => Err(Error::Domain(format!(
                "expectation parameter {:?} outside closure handling of {:?}",
                kappa.as_slice(),
                self.kind
            ))),
        }
    }
}
