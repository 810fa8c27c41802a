//! Halpern iterations of nonexpansive mappings on finite-dimensional normed
//! spaces, together with explicit, certified rates of asymptotic regularity.
//!
//! For a step-size schedule `(lambda_n)` with a rate of convergence `alpha`,
//! a Cauchy modulus `beta` of `sum |lambda_{n+1} - lambda_n|` and a rate of
//! divergence `theta` of `sum lambda_n`, [`bounds::phi_general`] returns an
//! index `Phi` such that every Halpern iterate past `Phi` has residual
//! `||x_n - T x_n|| < eps`, whenever `M` bounds `||x_n|| + ||x|| + ||Tx||`.
//!
//! * [`moduli`]: schedules, moduli and their empirical verification.
//! * [`bounds`]: the certified indices, in exact integer arithmetic.
//! * [`operators`]: nonexpansive test maps on `R^d`.
//! * [`iteration`]: Halpern and Krasnoselski-Mann runs, residual tracking.
//! * [`oracle`]: brute-force checks of the recurrence inequalities.

// `!(a < b)` is intentional throughout: a NaN must count as a failed check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod index;
pub mod iteration;
pub mod moduli;
pub mod operators;
pub mod oracle;
pub mod report;
pub mod summation;

pub use error::{Error, Result};
pub use index::BoundIndex;
pub use moduli::{ModulusFn, ModulusKind, ModulusRule, Schedule, ScheduleKind};
pub use operators::{NonexpansiveOp, NormSpec, Point};
pub use report::{CheckOutcome, CheckStatus, VerificationReport};
