//! Step-size schedules and their quantitative moduli.
//!
//! Three kinds of modulus appear as inputs to the rates in [`crate::bounds`]:
//!
//! * a *rate of convergence* `alpha` of `(lambda_n)` towards 0:
//!   `lambda_n < eps` for every `n >= alpha(eps)`;
//! * a *Cauchy modulus* `beta` of the partial sums
//!   `s_n = sum_{i<=n} |lambda_{i+1} - lambda_i|`:
//!   `s_{beta(eps)+n} - s_{beta(eps)} < eps` for every `n >= 1`;
//! * a *rate of divergence* `theta` of `sum lambda_n`:
//!   `sum_{i<=theta(n)} lambda_i >= n` for every `n >= 1`.
//!
//! Moduli are closed-form [`ModulusRule`]s evaluated in exact rational
//! arithmetic, so the indices they produce never depend on rounding.

use std::fmt;
use std::sync::Arc;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{ceil_nonneg, exact_rational, BoundIndex};
use crate::report::{CheckOutcome, VerificationReport, Witness};
use crate::summation::CompensatedSum;

/// Largest bit length a modulus may produce (8 MiB of digits).
const MAX_BOUND_BITS: u64 = 1 << 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulusKind {
    RateOfConvergence,
    CauchyModulus,
    RateOfDivergence,
}

impl ModulusKind {
    fn takes_accuracy(self) -> bool {
        !matches!(self, ModulusKind::RateOfDivergence)
    }
}

impl fmt::Display for ModulusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModulusKind::RateOfConvergence => "rate-of-convergence",
            ModulusKind::CauchyModulus => "Cauchy",
            ModulusKind::RateOfDivergence => "rate-of-divergence",
        })
    }
}

/// Closed-form evaluation rules.
///
/// The first three take an accuracy `eps > 0`, the last three a target
/// `n >= 1`. Every rule is clamped to output at least 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ModulusRule {
    /// `ceil(scale * eps^(-power)) + offset`
    InversePower { scale: f64, power: u32, offset: u64 },
    /// Least `k >= 1` with `ratio^(k+1) <= eps * (1 - ratio)`; a Cauchy
    /// modulus for the partial sums of `sum ratio^i`.
    GeometricTail { ratio: f64 },
    /// `value`, independent of eps.
    Constant { value: u64 },
    /// `base^n`
    Exponential { base: u64 },
    /// `ceil(n / rate)`
    Linear { rate: f64 },
    /// `ceil((n/2 + 1)^2)`
    HalfShiftedSquare,
}

impl ModulusRule {
    fn takes_accuracy(&self) -> bool {
        matches!(
            self,
            ModulusRule::InversePower { .. }
                | ModulusRule::GeometricTail { .. }
                | ModulusRule::Constant { .. }
        )
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModulus(msg));
        match *self {
            ModulusRule::InversePower { scale, power, .. } => {
                if !(scale.is_finite() && scale > 0.0) {
                    return bad(format!("inverse_power scale must be positive, got {scale}"));
                }
                if power == 0 {
                    return bad("inverse_power power must be at least 1".into());
                }
            }
            ModulusRule::GeometricTail { ratio } => {
                if !(ratio > 0.0 && ratio < 1.0) {
                    return bad(format!("geometric_tail ratio must lie in (0, 1), got {ratio}"));
                }
            }
            ModulusRule::Constant { value } => {
                if value == 0 {
                    return bad("constant modulus must be at least 1".into());
                }
            }
            ModulusRule::Exponential { base } => {
                if base < 2 {
                    return bad(format!("exponential base must be at least 2, got {base}"));
                }
            }
            ModulusRule::Linear { rate } => {
                if !(rate > 0.0 && rate <= 1.0) {
                    return bad(format!("linear rate must lie in (0, 1], got {rate}"));
                }
            }
            ModulusRule::HalfShiftedSquare => {}
        }
        Ok(())
    }
}

impl fmt::Display for ModulusRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModulusRule::InversePower { scale, power, offset } => {
                write!(f, "ceil({scale}/eps^{power})+{offset}")
            }
            ModulusRule::GeometricTail { ratio } => write!(f, "geometric_tail({ratio})"),
            ModulusRule::Constant { value } => write!(f, "{value}"),
            ModulusRule::Exponential { base } => write!(f, "{base}^n"),
            ModulusRule::Linear { rate } => write!(f, "ceil(n/{rate})"),
            ModulusRule::HalfShiftedSquare => f.write_str("ceil((n/2+1)^2)"),
        }
    }
}

/// A modulus: a kind tag plus the rule that evaluates it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModulus", into = "RawModulus")]
pub struct ModulusFn {
    kind: ModulusKind,
    rule: ModulusRule,
}

#[derive(Serialize, Deserialize)]
struct RawModulus {
    kind: ModulusKind,
    #[serde(flatten)]
    rule: ModulusRule,
}

impl TryFrom<RawModulus> for ModulusFn {
    type Error = Error;

    fn try_from(raw: RawModulus) -> Result<Self> {
        ModulusFn::new(raw.kind, raw.rule)
    }
}

impl From<ModulusFn> for RawModulus {
    fn from(m: ModulusFn) -> Self {
        RawModulus {
            kind: m.kind,
            rule: m.rule,
        }
    }
}

impl ModulusFn {
    pub fn new(kind: ModulusKind, rule: ModulusRule) -> Result<Self> {
        rule.validate()?;
        if kind.takes_accuracy() != rule.takes_accuracy() {
            return Err(Error::InvalidModulus(format!(
                "rule `{rule}` cannot define a {kind} modulus"
            )));
        }
        Ok(Self { kind, rule })
    }

    pub fn rate_of_convergence(rule: ModulusRule) -> Result<Self> {
        Self::new(ModulusKind::RateOfConvergence, rule)
    }

    pub fn cauchy(rule: ModulusRule) -> Result<Self> {
        Self::new(ModulusKind::CauchyModulus, rule)
    }

    pub fn rate_of_divergence(rule: ModulusRule) -> Result<Self> {
        Self::new(ModulusKind::RateOfDivergence, rule)
    }

    pub fn kind(&self) -> ModulusKind {
        self.kind
    }

    pub fn rule(&self) -> &ModulusRule {
        &self.rule
    }

    /// Same rule, relabelled. Used where one modulus serves two roles, e.g.
    /// a rate of convergence of a decreasing sequence doubling as the Cauchy
    /// modulus of its variation sums.
    pub fn relabel(&self, kind: ModulusKind) -> Result<Self> {
        Self::new(kind, self.rule.clone())
    }

    pub fn expect_kind(&self, expected: ModulusKind) -> Result<()> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(Error::ModulusKind {
                expected,
                found: self.kind,
            })
        }
    }

    /// Evaluates an accuracy modulus at `eps > 0`.
    pub fn at_accuracy(&self, eps: f64) -> Result<BoundIndex> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::Domain {
                name: "eps",
                value: eps.to_string(),
                domain: "(0, inf)",
            });
        }
        let eps = exact_rational(eps, "eps")?;
        self.at_accuracy_exact(&eps).map(BoundIndex::new)
    }

    /// Evaluates a divergence modulus at target `n >= 1`.
    pub fn at_target(&self, n: u64) -> Result<BoundIndex> {
        if n == 0 {
            return Err(Error::Domain {
                name: "n",
                value: "0".into(),
                domain: "N* = {1, 2, ...}",
            });
        }
        self.at_target_exact(&BigUint::from(n)).map(BoundIndex::new)
    }

    pub(crate) fn at_accuracy_exact(&self, eps: &BigRational) -> Result<BigUint> {
        if !self.kind.takes_accuracy() {
            return Err(Error::ModulusKind {
                expected: ModulusKind::RateOfConvergence,
                found: self.kind,
            });
        }
        let value = match self.rule {
            ModulusRule::InversePower { scale, power, offset } => {
                let scale = exact_rational(scale, "scale")?;
                let inv = eps.recip();
                let mut p = BigRational::one();
                for _ in 0..power {
                    p *= &inv;
                }
                ceil_nonneg(&(scale * p)) + BigUint::from(offset)
            }
            ModulusRule::GeometricTail { ratio } => BigUint::from(geometric_tail_index(ratio, eps)?),
            ModulusRule::Constant { value } => BigUint::from(value),
            _ => unreachable!("accuracy kinds only carry accuracy rules"),
        };
        Ok(value.max(BigUint::one()))
    }

    pub(crate) fn at_target_exact(&self, n: &BigUint) -> Result<BigUint> {
        if self.kind.takes_accuracy() {
            return Err(Error::ModulusKind {
                expected: ModulusKind::RateOfDivergence,
                found: self.kind,
            });
        }
        let value = match self.rule {
            ModulusRule::Exponential { base } => {
                let exponent = n
                    .to_u32()
                    .filter(|&e| u64::from(e) * u64::from(64 - base.leading_zeros()) <= MAX_BOUND_BITS)
                    .ok_or_else(|| Error::BoundTooLarge(format!("{base}^{n}")))?;
                BigUint::from(base).pow(exponent)
            }
            ModulusRule::Linear { rate } => {
                let rate = exact_rational(rate, "rate")?;
                let n = BigRational::from_integer(BigInt::from(n.clone()));
                ceil_nonneg(&(n / rate))
            }
            ModulusRule::HalfShiftedSquare => {
                // (n/2 + 1)^2 = (n + 2)^2 / 4
                let shifted = n + 2u32;
                let square = &shifted * &shifted;
                (square + 3u32) / 4u32
            }
            _ => unreachable!("divergence kinds only carry divergence rules"),
        };
        Ok(value.max(BigUint::one()))
    }
}

impl fmt::Display for ModulusFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} modulus {}", self.kind, self.rule)
    }
}

fn geometric_tail_index(ratio: f64, eps: &BigRational) -> Result<u64> {
    let r = exact_rational(ratio, "ratio")?;
    let target = eps * (BigRational::one() - &r);
    let holds = |k: u64| -> bool {
        let mut p = BigRational::one();
        for _ in 0..=k {
            p *= &r;
        }
        p <= target
    };
    let estimate = target
        .to_f64()
        .filter(|t| *t > 0.0)
        .map_or(1.0, |t| (t.ln() / ratio.ln() - 1.0).max(1.0));
    if !estimate.is_finite() || estimate > 1e7 {
        return Err(Error::BoundTooLarge(format!("geometric tail for eps={eps}")));
    }
    let mut k = (estimate.floor() as u64).saturating_sub(2).max(1);
    while k > 1 && holds(k - 1) {
        k -= 1;
    }
    while !holds(k) {
        k += 1;
    }
    Ok(k)
}

/// A user-supplied step-size rule. The generator is evaluated lazily and
/// range-checked on every evaluation.
#[derive(Clone)]
pub struct CustomRule {
    name: String,
    generator: Arc<dyn Fn(u64) -> f64 + Send + Sync>,
}

impl CustomRule {
    pub fn new(name: impl Into<String>, generator: impl Fn(u64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            generator: Arc::new(generator),
        }
    }
}

impl fmt::Debug for CustomRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomRule").field("name", &self.name).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum ScheduleKind {
    /// `lambda_n = 1/n`
    Harmonic,
    /// `lambda_n = 1/(n+1)`
    ShiftedHarmonic,
    /// `lambda_n = 1/sqrt(n)`
    InverseSqrt,
    Constant(f64),
    Custom(CustomRule),
}

/// A step-size sequence `(lambda_n)_{n>=1}` in `[0, 1]` with its moduli.
#[derive(Debug, Clone)]
pub struct Schedule {
    kind: ScheduleKind,
    alpha: Option<ModulusFn>,
    beta: Option<ModulusFn>,
    theta: Option<ModulusFn>,
    decreasing: bool,
}

fn builtin(kind: ModulusKind, rule: ModulusRule) -> Option<ModulusFn> {
    Some(ModulusFn::new(kind, rule).expect("built-in moduli are well formed"))
}

impl Schedule {
    pub fn harmonic() -> Self {
        Self {
            kind: ScheduleKind::Harmonic,
            alpha: builtin(
                ModulusKind::RateOfConvergence,
                ModulusRule::InversePower { scale: 1.0, power: 1, offset: 1 },
            ),
            beta: None,
            theta: builtin(ModulusKind::RateOfDivergence, ModulusRule::Exponential { base: 4 }),
            decreasing: true,
        }
    }

    /// `1/(n+1)`. Shares the harmonic divergence modulus: the partial sums
    /// are `H_{N+1} - 1`, and `H_{4^n} >= 1 + n`.
    pub fn shifted_harmonic() -> Self {
        Self {
            kind: ScheduleKind::ShiftedHarmonic,
            alpha: builtin(
                ModulusKind::RateOfConvergence,
                ModulusRule::InversePower { scale: 1.0, power: 1, offset: 0 },
            ),
            beta: None,
            theta: builtin(ModulusKind::RateOfDivergence, ModulusRule::Exponential { base: 4 }),
            decreasing: true,
        }
    }

    /// `1/sqrt(n)`, with `alpha(eps) = ceil(1/eps^2) + 1` and
    /// `theta(n) = ceil((n/2 + 1)^2)` from `sum_{i<=N} i^(-1/2) >= 2(sqrt(N+1) - 1)`.
    pub fn inverse_sqrt() -> Self {
        Self {
            kind: ScheduleKind::InverseSqrt,
            alpha: builtin(
                ModulusKind::RateOfConvergence,
                ModulusRule::InversePower { scale: 1.0, power: 2, offset: 1 },
            ),
            beta: None,
            theta: builtin(ModulusKind::RateOfDivergence, ModulusRule::HalfShiftedSquare),
            decreasing: true,
        }
    }

    /// `lambda_n = c`. Only `c = 0` has a rate of convergence and only
    /// `c > 0` has a rate of divergence; the variation sums vanish either way.
    pub fn constant(c: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::ScheduleDomain {
                schedule: format!("constant({c})"),
                index: 1,
                value: c,
            });
        }
        Ok(Self {
            kind: ScheduleKind::Constant(c),
            alpha: if c == 0.0 {
                builtin(ModulusKind::RateOfConvergence, ModulusRule::Constant { value: 1 })
            } else {
                None
            },
            beta: builtin(ModulusKind::CauchyModulus, ModulusRule::Constant { value: 1 }),
            theta: if c > 0.0 {
                builtin(ModulusKind::RateOfDivergence, ModulusRule::Linear { rate: c })
            } else {
                None
            },
            decreasing: true,
        })
    }

    /// A custom sequence. Moduli must be attached by the caller.
    pub fn custom(rule: CustomRule, decreasing: bool) -> Self {
        Self {
            kind: ScheduleKind::Custom(rule),
            alpha: None,
            beta: None,
            theta: None,
            decreasing,
        }
    }

    pub fn with_alpha(mut self, alpha: ModulusFn) -> Result<Self> {
        alpha.expect_kind(ModulusKind::RateOfConvergence)?;
        self.alpha = Some(alpha);
        Ok(self)
    }

    pub fn with_beta(mut self, beta: ModulusFn) -> Result<Self> {
        beta.expect_kind(ModulusKind::CauchyModulus)?;
        self.beta = Some(beta);
        Ok(self)
    }

    pub fn with_theta(mut self, theta: ModulusFn) -> Result<Self> {
        theta.expect_kind(ModulusKind::RateOfDivergence)?;
        self.theta = Some(theta);
        Ok(self)
    }

    pub fn kind(&self) -> &ScheduleKind {
        &self.kind
    }

    pub fn is_decreasing(&self) -> bool {
        self.decreasing
    }

    pub fn name(&self) -> String {
        match &self.kind {
            ScheduleKind::Harmonic => "harmonic".into(),
            ScheduleKind::ShiftedHarmonic => "shifted_harmonic".into(),
            ScheduleKind::InverseSqrt => "inverse_sqrt".into(),
            ScheduleKind::Constant(c) => format!("constant({c})"),
            ScheduleKind::Custom(rule) => rule.name.clone(),
        }
    }

    fn raw(&self, n: u64) -> f64 {
        match &self.kind {
            ScheduleKind::Harmonic => 1.0 / n as f64,
            ScheduleKind::ShiftedHarmonic => 1.0 / (n as f64 + 1.0),
            ScheduleKind::InverseSqrt => 1.0 / (n as f64).sqrt(),
            ScheduleKind::Constant(c) => *c,
            ScheduleKind::Custom(rule) => (rule.generator)(n),
        }
    }

    /// `lambda_n` for `n >= 1`.
    pub fn lambda_at(&self, n: u64) -> Result<f64> {
        if n == 0 {
            return Err(Error::Domain {
                name: "n",
                value: "0".into(),
                domain: "N* = {1, 2, ...}",
            });
        }
        let value = self.raw(n);
        if (0.0..=1.0).contains(&value) {
            Ok(value)
        } else {
            Err(Error::ScheduleDomain {
                schedule: self.name(),
                index: n,
                value,
            })
        }
    }

    /// The attached rate of convergence.
    pub fn alpha(&self) -> Result<&ModulusFn> {
        self.alpha.as_ref().ok_or_else(|| self.missing("rate of convergence (alpha)"))
    }

    /// The attached Cauchy modulus of the variation sums; for a decreasing
    /// schedule without one, its rate of convergence relabelled.
    pub fn beta(&self) -> Result<ModulusFn> {
        if let Some(beta) = &self.beta {
            return Ok(beta.clone());
        }
        match (&self.alpha, self.decreasing) {
            (Some(alpha), true) => alpha.relabel(ModulusKind::CauchyModulus),
            _ => Err(self.missing("Cauchy modulus (beta)")),
        }
    }

    pub fn theta(&self) -> Result<&ModulusFn> {
        self.theta.as_ref().ok_or_else(|| self.missing("rate of divergence (theta)"))
    }

    fn missing(&self, modulus: &'static str) -> Error {
        Error::MissingModulus {
            schedule: self.name(),
            modulus,
        }
    }

    /// `alpha(eps)`: from this index on, `lambda_n < eps`.
    pub fn alpha_of(&self, eps: f64) -> Result<BoundIndex> {
        self.alpha()?.at_accuracy(eps)
    }

    /// `beta(eps)`: Cauchy modulus of `s_n = sum_{i<=n} |lambda_{i+1} - lambda_i|`.
    pub fn beta_of(&self, eps: f64) -> Result<BoundIndex> {
        self.beta()?.at_accuracy(eps)
    }

    /// `theta(n)`: by this index the partial sums of `lambda` reach `n`.
    pub fn theta_of(&self, n: u64) -> Result<BoundIndex> {
        self.theta()?.at_target(n)
    }
}

/// Scans the defining inequalities of every attached modulus up to
/// `horizon`.
///
/// Checks whose indices leave the horizon are reported as truncated. The
/// step sizes themselves are range-checked, and monotonicity is checked when
/// the schedule is declared decreasing.
pub fn verify_moduli(schedule: &Schedule, horizon: u64, eps_grid: &[f64]) -> VerificationReport {
    let mut report = VerificationReport::new(format!("moduli of {}", schedule.name()));
    if horizon == 0 {
        report.push(CheckOutcome::truncated("moduli", None, "horizon is 0"));
        return report;
    }

    // lambda[i] = lambda_i for 1 <= i <= horizon + 1; index 0 unused
    let mut lambda = Vec::with_capacity(horizon as usize + 2);
    lambda.push(f64::NAN);
    let mut range_fail = None;
    for n in 1..=horizon + 1 {
        let v = schedule.raw(n);
        if range_fail.is_none() && !(0.0..=1.0).contains(&v) {
            range_fail = Some(Witness { index: n, lhs: v, rhs: 1.0 });
        }
        lambda.push(v);
    }
    report.push(match range_fail {
        None => CheckOutcome::pass("lambda_in_unit_interval", None, horizon + 1),
        Some(w) => CheckOutcome::fail("lambda_in_unit_interval", None, horizon + 1, w),
    });

    if schedule.is_decreasing() {
        let violation = (1..=horizon).find(|&n| lambda[n as usize + 1] > lambda[n as usize]);
        report.push(match violation {
            None => CheckOutcome::pass("decreasing", None, horizon),
            Some(n) => CheckOutcome::fail(
                "decreasing",
                None,
                n,
                Witness { index: n, lhs: lambda[n as usize + 1], rhs: lambda[n as usize] },
            ),
        });
    }

    if let Ok(alpha) = schedule.alpha() {
        for &eps in eps_grid {
            report.push(check_rate_of_convergence(alpha, &lambda, horizon, eps));
        }
    }
    if let Ok(beta) = schedule.beta() {
        for &eps in eps_grid {
            report.push(check_cauchy(&beta, &lambda, horizon, eps));
        }
    }
    if let Ok(theta) = schedule.theta() {
        report.extend_divergence(theta, &lambda, horizon);
    }
    report
}

fn check_rate_of_convergence(alpha: &ModulusFn, lambda: &[f64], horizon: u64, eps: f64) -> CheckOutcome {
    const NAME: &str = "rate_of_convergence";
    let start = match alpha.at_accuracy(eps) {
        Ok(idx) => idx,
        Err(e) => return CheckOutcome::truncated(NAME, Some(eps), e.to_string()),
    };
    let Some(start) = start.to_u64().filter(|&s| s <= horizon) else {
        return CheckOutcome::truncated(NAME, Some(eps), format!("alpha(eps) = {start} exceeds horizon"));
    };
    let evaluated = horizon - start + 1;
    match (start..=horizon).find(|&n| !(lambda[n as usize] < eps)) {
        None => CheckOutcome::pass(NAME, Some(eps), evaluated),
        Some(n) => CheckOutcome::fail(NAME, Some(eps), evaluated, Witness { index: n, lhs: lambda[n as usize], rhs: eps }),
    }
    .with_note(format!("alpha(eps) = {start}"))
}

fn check_cauchy(beta: &ModulusFn, lambda: &[f64], horizon: u64, eps: f64) -> CheckOutcome {
    const NAME: &str = "cauchy_modulus";
    let start = match beta.at_accuracy(eps) {
        Ok(idx) => idx,
        Err(e) => return CheckOutcome::truncated(NAME, Some(eps), e.to_string()),
    };
    let Some(m) = start.to_u64().filter(|&s| s < horizon) else {
        return CheckOutcome::truncated(NAME, Some(eps), format!("beta(eps) = {start} leaves no room below horizon"));
    };
    // s_{m+n} - s_m = sum_{i=m+1}^{m+n} |lambda_{i+1} - lambda_i|
    let mut diff = CompensatedSum::new();
    for i in m + 1..=horizon {
        diff.add((lambda[i as usize + 1] - lambda[i as usize]).abs());
        let value = diff.value();
        if !(value < eps) {
            return CheckOutcome::fail(NAME, Some(eps), i - m, Witness { index: i - m, lhs: value, rhs: eps })
                .with_note(format!("beta(eps) = {m}"));
        }
    }
    CheckOutcome::pass(NAME, Some(eps), horizon - m).with_note(format!("beta(eps) = {m}"))
}

impl VerificationReport {
    fn extend_divergence(&mut self, theta: &ModulusFn, lambda: &[f64], horizon: u64) {
        // prefix[N] = sum_{i<=N} lambda_i, compensated
        let mut prefix = Vec::with_capacity(horizon as usize + 1);
        prefix.push(0.0);
        let mut acc = CompensatedSum::new();
        for &v in &lambda[1..=horizon as usize] {
            acc.add(v);
            prefix.push(acc.value());
        }

        let mut checked = 0u64;
        let mut divergence_fail = None;
        let mut growth_fail = None;
        let mut cutoff = None;
        for n in 1..=horizon {
            let idx = match theta.at_target(n) {
                Ok(idx) => idx,
                Err(_) => {
                    cutoff = Some(n);
                    break;
                }
            };
            let Some(big_n) = idx.to_u64().filter(|&v| v <= horizon) else {
                cutoff = Some(n);
                break;
            };
            checked += 1;
            if growth_fail.is_none() && big_n < n {
                growth_fail = Some(Witness { index: n, lhs: big_n as f64, rhs: n as f64 });
            }
            let reached = prefix[big_n as usize];
            if divergence_fail.is_none() && !(reached >= n as f64) {
                divergence_fail = Some(Witness { index: n, lhs: reached, rhs: n as f64 });
            }
        }

        let note = match cutoff {
            Some(n) => format!("checked n <= {}; theta({n}) exceeds horizon", n - 1),
            None => format!("checked n <= {horizon}"),
        };
        let outcome = |name: &str, fail: Option<Witness>| match fail {
            _ if checked == 0 => CheckOutcome::truncated(name, None, note.clone()),
            None => CheckOutcome::pass(name, None, checked).with_note(note.clone()),
            Some(w) => CheckOutcome::fail(name, None, checked, w).with_note(note.clone()),
        };
        self.push(outcome("rate_of_divergence", divergence_fail));
        self.push(outcome("divergence_modulus_dominates_identity", growth_fail));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::CheckStatus;

    #[test]
    fn lambda_values() {
        assert_eq!(Schedule::harmonic().lambda_at(4).unwrap(), 0.25);
        assert_eq!(Schedule::constant(0.5).unwrap().lambda_at(17).unwrap(), 0.5);
        assert_eq!(Schedule::inverse_sqrt().lambda_at(16).unwrap(), 0.25);
        assert_eq!(Schedule::shifted_harmonic().lambda_at(3).unwrap(), 0.25);
        assert!(Schedule::harmonic().lambda_at(0).is_err());
    }

    #[test]
    fn custom_generator_out_of_range() {
        let s = Schedule::custom(CustomRule::new("bad", |n| if n == 3 { 1.5 } else { 0.5 }), false);
        assert_eq!(s.lambda_at(2).unwrap(), 0.5);
        assert!(matches!(s.lambda_at(3), Err(Error::ScheduleDomain { index: 3, .. })));
        assert!(Schedule::constant(1.5).is_err());
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(Schedule::harmonic().alpha_of(0.1).unwrap(), 11u64);
        assert_eq!(Schedule::constant(0.0).unwrap().alpha_of(1e-9).unwrap(), 1u64);
        assert_eq!(Schedule::inverse_sqrt().alpha_of(0.1).unwrap(), 101u64);
        assert!(matches!(
            Schedule::constant(0.5).unwrap().alpha_of(0.1),
            Err(Error::MissingModulus { .. })
        ));
    }

    #[test]
    fn beta_examples() {
        assert_eq!(Schedule::harmonic().beta_of(0.1).unwrap(), 11u64);
        assert_eq!(Schedule::constant(0.3).unwrap().beta_of(1e-6).unwrap(), 1u64);
        assert_eq!(Schedule::inverse_sqrt().beta_of(0.01).unwrap(), 10001u64);
        let custom = Schedule::custom(CustomRule::new("c", |_| 0.5), false);
        assert!(matches!(custom.beta_of(0.1), Err(Error::MissingModulus { .. })));
    }

    #[test]
    fn theta_examples() {
        assert_eq!(Schedule::harmonic().theta_of(3).unwrap(), 64u64);
        assert_eq!(Schedule::constant(1.0).unwrap().theta_of(7).unwrap(), 7u64);
        assert_eq!(Schedule::inverse_sqrt().theta_of(4).unwrap(), 9u64);
        assert_eq!(Schedule::constant(0.5).unwrap().theta_of(5).unwrap(), 10u64);
        assert!(Schedule::constant(0.0).unwrap().theta_of(1).is_err());
    }

    #[test]
    fn half_shifted_square_rounds_up() {
        let theta = Schedule::inverse_sqrt();
        // (1/2 + 1)^2 = 2.25, (9223/2 + 1)^2 = 21275156.25
        assert_eq!(theta.theta_of(1).unwrap(), 3u64);
        assert_eq!(theta.theta_of(9223).unwrap(), 21_275_157u64);
    }

    #[test]
    fn geometric_tail_matches_log2_form() {
        let gamma = ModulusFn::cauchy(ModulusRule::GeometricTail { ratio: 0.5 }).unwrap();
        for (eps, expected) in [(0.25, 2u64), (0.5, 1), (1.0, 1), (0.1, 4), (0.001, 10)] {
            let closed = ((1.0f64 / eps).log2().ceil() as u64).max(1);
            assert_eq!(closed, expected);
            assert_eq!(gamma.at_accuracy(eps).unwrap(), expected, "eps={eps}");
        }
    }

    #[test]
    fn kind_mismatch_rejected() {
        assert!(ModulusFn::rate_of_divergence(ModulusRule::Constant { value: 3 }).is_err());
        assert!(ModulusFn::cauchy(ModulusRule::Exponential { base: 4 }).is_err());
        let theta = ModulusFn::rate_of_divergence(ModulusRule::Exponential { base: 4 }).unwrap();
        assert!(Schedule::harmonic().with_alpha(theta).is_err());
    }

    #[test]
    fn modulus_serde_shape() {
        let m = ModulusFn::rate_of_divergence(ModulusRule::Linear { rate: 0.5 }).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(text, r#"{"kind":"rate_of_divergence","rule":"linear","rate":0.5}"#);
        let back: ModulusFn = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        let bad = r#"{"kind":"cauchy_modulus","rule":"exponential","base":4}"#;
        assert!(serde_json::from_str::<ModulusFn>(bad).is_err());
    }

    #[test]
    fn verify_harmonic_small() {
        let report = verify_moduli(&Schedule::harmonic(), 100_000, &[0.1, 0.01]);
        assert!(report.all_passed(), "{report:?}");
        assert_eq!(report.count(CheckStatus::Fail), 0);
    }

    #[test]
    fn verify_rejects_underclaimed_divergence() {
        let s = Schedule::constant(0.5)
            .unwrap()
            .with_theta(ModulusFn::rate_of_divergence(ModulusRule::Linear { rate: 1.0 }).unwrap())
            .unwrap();
        let report = verify_moduli(&s, 100, &[]);
        let fail = report.failures().find(|o| o.check == "rate_of_divergence").expect("failure");
        let w = fail.witness.as_ref().unwrap();
        assert_eq!(w.index, 1);
        assert_eq!(w.lhs, 0.5);
    }

    #[test]
    fn verify_rejects_bad_alpha_and_monotonicity() {
        let s = Schedule::custom(CustomRule::new("zigzag", |n| if n % 2 == 0 { 0.5 } else { 1.0 / n as f64 }), true)
            .with_alpha(ModulusFn::rate_of_convergence(ModulusRule::InversePower { scale: 1.0, power: 1, offset: 1 }).unwrap())
            .unwrap();
        let report = verify_moduli(&s, 1000, &[0.1]);
        assert!(report.failures().any(|o| o.check == "decreasing"));
        assert!(report.failures().any(|o| o.check == "rate_of_convergence"));
    }
}
