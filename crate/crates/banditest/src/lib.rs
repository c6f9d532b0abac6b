//! Sequential multi-hypothesis testing on K-armed exponential-family
//! bandits with switching costs.
//!
//! The crate implements the full identification pipeline:
//!
//! * [`expfam`] — vector exponential families with natural/expectation
//!   duality, KL divergence and sampling;
//! * [`hypotheses`] — structured hypothesis classes (odd arm, best arm)
//!   with constrained ML estimation and nearest-alternative infima;
//! * [`oracle`] — the max-min characteristic rate `D*` and the optimal
//!   sampling weights `lambda*`, plus the information-theoretic lower bound
//!   on expected delay;
//! * [`glr`] — conjugate-prior averaged likelihoods and the modified GLR
//!   statistics `Z_lm(n)`;
//! * [`policy`] — the sluggish, forced-exploration sequential controller
//!   with D-tracking and fixed-threshold stopping;
//! * [`harness`] — seeded Monte Carlo campaigns over (log L, gamma, beta)
//!   grids with deterministic CSV output.

pub mod error;
pub mod expfam;
pub mod glr;
pub mod harness;
pub mod hypotheses;
pub mod numeric;
pub mod oracle;
pub mod policy;

pub use error::{Error, Result};
