//! Brute-force checks of the recurrence inequalities behind the rates.
//!
//! The recurrence `a_{n+1} <= (1 - lambda_{n+1}) a_n + b_n` is simulated at
//! equality, which is the extremal admissible case: any certificate that
//! holds for every admissible sequence must hold for this one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::h_liu;
use crate::error::{Error, Result};
use crate::index::BoundIndex;
use crate::iteration::{run_streaming, Scheme};
use crate::moduli::{ModulusFn, ModulusRule, Schedule};
use crate::operators::{NonexpansiveOp, Point};
use crate::report::{CheckOutcome, CheckStatus, VerificationReport, Witness};
use crate::summation::CompensatedSum;

/// A nonnegative sequence `(b_n)_{n>=1}` with summable terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbationSeq {
    Zero,
    /// `b_n = ratio^n`
    Geometric { ratio: f64 },
    /// `b_n = value` for `n <= len`, then 0.
    EventuallyZero { value: f64, len: u64 },
}

impl PerturbationSeq {
    pub fn term(&self, n: u64) -> f64 {
        match *self {
            PerturbationSeq::Zero => 0.0,
            PerturbationSeq::Geometric { ratio } => ratio.powi(n.min(i32::MAX as u64) as i32),
            PerturbationSeq::EventuallyZero { value, len } => {
                if n <= len {
                    value
                } else {
                    0.0
                }
            }
        }
    }

    /// `sum_{n>=1} b_n`
    pub fn total(&self) -> f64 {
        match *self {
            PerturbationSeq::Zero => 0.0,
            PerturbationSeq::Geometric { ratio } => ratio / (1.0 - ratio),
            PerturbationSeq::EventuallyZero { value, len } => value * len as f64,
        }
    }

    /// A Cauchy modulus of the partial sums `s_m = sum_{i<=m} b_i`.
    pub fn gamma(&self) -> Result<ModulusFn> {
        ModulusFn::cauchy(match *self {
            PerturbationSeq::Zero => ModulusRule::Constant { value: 1 },
            PerturbationSeq::Geometric { ratio } => ModulusRule::GeometricTail { ratio },
            PerturbationSeq::EventuallyZero { len, .. } => ModulusRule::Constant { value: len.max(1) },
        })
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            PerturbationSeq::Zero => true,
            PerturbationSeq::Geometric { ratio } => ratio > 0.0 && ratio < 1.0,
            PerturbationSeq::EventuallyZero { value, .. } => value.is_finite() && value >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!("{self:?} is not a nonnegative summable sequence")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecurrenceInstance {
    pub lambda: Schedule,
    pub b: PerturbationSeq,
    pub a1: f64,
    /// Claimed bound `a_n <= D`.
    pub d: u64,
}

impl RecurrenceInstance {
    pub fn new(lambda: Schedule, b: PerturbationSeq, a1: f64, d: u64) -> Result<Self> {
        b.validate()?;
        if !(a1.is_finite() && a1 >= 0.0) {
            return Err(Error::Domain { name: "a1", value: a1.to_string(), domain: "[0, inf)" });
        }
        if d == 0 {
            return Err(Error::Domain { name: "D", value: "0".into(), domain: "N* = {1, 2, ...}" });
        }
        Ok(Self { lambda, b, a1, d })
    }

    /// With `D = max(1, ceil(a1 + sum b_n))`, the bound every solution of
    /// the recurrence obeys.
    pub fn with_default_bound(lambda: Schedule, b: PerturbationSeq, a1: f64) -> Result<Self> {
        let d = ((a1 + b.total()).ceil() as u64).max(1);
        Self::new(lambda, b, a1, d)
    }

    /// A random instance: `lambda` from {constant, harmonic, inverse_sqrt},
    /// `b` geometric or eventually zero.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lambda = match rng.random_range(0..3) {
            0 => Schedule::constant(rng.random_range(0.05..=1.0)).expect("in range"),
            1 => Schedule::harmonic(),
            _ => Schedule::inverse_sqrt(),
        };
        let b = if rng.random_bool(0.5) {
            PerturbationSeq::Geometric { ratio: rng.random_range(0.05..0.95) }
        } else {
            PerturbationSeq::EventuallyZero { value: rng.random_range(0.0..0.5), len: rng.random_range(1..40) }
        };
        let a1 = rng.random_range(0.0..3.0);
        Self::with_default_bound(lambda, b, a1).expect("random instances are valid")
    }

    pub fn describe(&self) -> String {
        format!("lambda={} b={:?} a1={} D={}", self.lambda.name(), self.b, self.a1, self.d)
    }
}

/// `a_1 = a1`, `a_{n+1} = (1 - lambda_{n+1}) a_n + b_n`; element `i` of the
/// result is `a_{i+1}`, for `n = 1..=horizon`.
pub fn simulate_recurrence(inst: &RecurrenceInstance, horizon: u64) -> Result<Vec<f64>> {
    let mut a = Vec::with_capacity(horizon as usize);
    let mut cur = inst.a1;
    a.push(cur);
    for n in 1..horizon {
        let lambda = inst.lambda.lambda_at(n + 1)?;
        cur = (1.0 - lambda) * cur + inst.b.term(n);
        a.push(cur);
    }
    Ok(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductBound {
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
}

/// Evaluates `a_{n+m} <= [prod_{j=n}^{n+m-1} (1 - lambda_{j+1})] a_n + sum_{j=n}^{n+m-1} b_j`
/// on a simulated sequence. `None` if `n + m` is past the simulation.
pub fn check_product_bound(inst: &RecurrenceInstance, a: &[f64], n: u64, m: u64, tol: f64) -> Option<ProductBound> {
    if n == 0 || m == 0 || n + m > a.len() as u64 {
        return None;
    }
    let mut product = 1.0;
    let mut tail = CompensatedSum::new();
    for j in n..n + m {
        product *= 1.0 - inst.lambda.lambda_at(j + 1).ok()?;
        tail.add(inst.b.term(j));
    }
    let lhs = a[(n + m - 1) as usize];
    let rhs = product * a[(n - 1) as usize] + tail.value();
    Some(ProductBound { lhs, rhs, passed: lhs <= rhs + tol * (1.0 + rhs) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HBoundEntry {
    pub eps: f64,
    /// The certified index, when it could be computed.
    pub h: Option<BoundIndex>,
    /// Last index scanned; 0 when the scan was skipped.
    pub checked_through: u64,
    pub status: CheckStatus,
    pub witness: Option<Witness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HBoundReport {
    pub instance: String,
    pub horizon: u64,
    /// `a_n <= D` and `a_n <= a1 + sum b_j` along the simulation.
    pub boundedness: CheckOutcome,
    pub entries: Vec<HBoundEntry>,
}

impl HBoundReport {
    pub fn all_passed(&self) -> bool {
        self.boundedness.status != CheckStatus::Fail && self.entries.iter().all(|e| e.status != CheckStatus::Fail)
    }

    pub fn to_verification(&self) -> VerificationReport {
        let mut report = VerificationReport::new(self.instance.clone());
        report.push(self.boundedness.clone());
        for e in &self.entries {
            let note = match &e.h {
                Some(h) => format!("h = {h}"),
                None => e.error.clone().unwrap_or_default(),
            };
            report.push(CheckOutcome {
                check: "h_bound".into(),
                parameter: Some(e.eps),
                status: e.status,
                evaluated: e.checked_through,
                witness: e.witness.clone(),
                note,
            });
        }
        report
    }
}

/// For each `eps` whose certified `h = h(gamma, delta, D, eps)` lies within
/// `horizon`, checks `a_n < eps` for all `n` in `[h, horizon]`.
pub fn check_h_bound(inst: &RecurrenceInstance, gamma: &ModulusFn, delta: &ModulusFn, eps_grid: &[f64], horizon: u64) -> Result<HBoundReport> {
    let a = simulate_recurrence(inst, horizon)?;

    let mut total = CompensatedSum::new();
    total.extend((1..horizon).map(|j| inst.b.term(j)));
    let sum_bound = inst.a1 + total.value() + 1e-9;
    let d = inst.d as f64;
    let boundedness = match a.iter().enumerate().find(|(_, &v)| v > d || v > sum_bound) {
        None => CheckOutcome::pass("bounded", None, horizon),
        Some((i, &v)) => CheckOutcome::fail("bounded", None, horizon, Witness { index: i as u64 + 1, lhs: v, rhs: d.min(sum_bound) }),
    };

    let entries = eps_grid
        .iter()
        .map(|&eps| {
            let h = match h_liu(gamma, delta, inst.d, eps) {
                Ok(h) => h,
                Err(e) => {
                    return HBoundEntry { eps, h: None, checked_through: 0, status: CheckStatus::Truncated, witness: None, error: Some(e.to_string()) };
                }
            };
            let Some(start) = h.to_u64().filter(|&s| s <= horizon) else {
                return HBoundEntry { eps, h: Some(h), checked_through: 0, status: CheckStatus::Truncated, witness: None, error: None };
            };
            let violation = (start..=horizon).find(|&n| !(a[(n - 1) as usize] < eps));
            HBoundEntry {
                eps,
                h: Some(h),
                checked_through: horizon,
                status: if violation.is_some() { CheckStatus::Fail } else { CheckStatus::Pass },
                witness: violation.map(|n| Witness { index: n, lhs: a[(n - 1) as usize], rhs: eps }),
                error: None,
            }
        })
        .collect();

    Ok(HBoundReport { instance: inst.describe(), horizon, boundedness, entries })
}

/// `(1/(n+1)) sum_{i=0}^{n} T^i x` by direct powering and compensated
/// summation. Only defined for linear `T`.
pub fn cesaro_oracle(op: &NonexpansiveOp, x: &Point, n: u64) -> Result<Point> {
    cesaro_series(op, x, n).map(|mut all| all.pop().expect("n + 1 averages"))
}

/// The Cesàro averages for every `k = 0..=n`.
pub fn cesaro_series(op: &NonexpansiveOp, x: &Point, n: u64) -> Result<Vec<Point>> {
    if !op.is_linear() {
        return Err(Error::Precondition(format!("operator `{}` is not linear", op.name())));
    }
    let mut power = x.clone();
    let mut sums = vec![CompensatedSum::new(); x.dim()];
    let mut out = Vec::with_capacity(n as usize + 1);
    for k in 0..=n {
        for (s, v) in sums.iter_mut().zip(power.iter()) {
            s.add(*v);
        }
        let denom = (k + 1) as f64;
        out.push(Point::new(sums.iter().map(|s| s.value() / denom).collect())?);
        if k < n {
            power = op.apply(&power)?;
        }
    }
    Ok(out)
}

/// Halpern with `lambda_n = 1/(n+1)` against [`cesaro_series`]: passes iff
/// `||x_k - C_k|| <= tol * (k + 1)` for every `k <= n`.
pub fn check_cesaro(op: &NonexpansiveOp, x: &Point, n: u64, tol: f64) -> Result<CheckOutcome> {
    let averages = cesaro_series(op, x, n)?;
    let norm = op.norm();
    let mut k = 0u64;
    let mut witness = None;
    run_streaming(Scheme::Halpern, op, x, &Schedule::shifted_harmonic(), n.max(1), |step, cur| {
        if step.n > n || witness.is_some() {
            return;
        }
        let gap = norm.distance(cur, &averages[step.n as usize]);
        let allowed = tol * (step.n + 1) as f64;
        if !(gap <= allowed) {
            witness = Some(Witness { index: step.n, lhs: gap, rhs: allowed });
        }
        k = step.n;
    })?;
    Ok(match witness {
        None => CheckOutcome::pass("cesaro_identity", None, k + 1),
        Some(w) => CheckOutcome::fail("cesaro_identity", None, w.index + 1, w),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{NormSpec, OpKind, PlaneRotation};

    fn half_geometric() -> RecurrenceInstance {
        RecurrenceInstance::new(Schedule::constant(0.5).unwrap(), PerturbationSeq::Geometric { ratio: 0.5 }, 1.0, 2).unwrap()
    }

    #[test]
    fn simulate_examples() {
        let kill = RecurrenceInstance::new(Schedule::constant(1.0).unwrap(), PerturbationSeq::Zero, 5.0, 5).unwrap();
        assert_eq!(simulate_recurrence(&kill, 4).unwrap(), vec![5.0, 0.0, 0.0, 0.0]);
        let hold = RecurrenceInstance::new(Schedule::constant(0.0).unwrap(), PerturbationSeq::Zero, 5.0, 5).unwrap();
        assert_eq!(simulate_recurrence(&hold, 4).unwrap(), vec![5.0; 4]);
        assert_eq!(simulate_recurrence(&half_geometric(), 5).unwrap(), vec![1.0, 1.0, 0.75, 0.5, 0.3125]);
    }

    #[test]
    fn product_bound_examples() {
        let inst = half_geometric();
        let a = simulate_recurrence(&inst, 20).unwrap();
        for n in 1..19 {
            let step = check_product_bound(&inst, &a, n, 1, 0.0).unwrap();
            assert!(step.passed);
            assert_eq!(step.lhs, step.rhs, "equality at m = 1");
        }
        // a_5 = 0.3125 <= (1/2)^4 * 1 + (1/2 + 1/4 + 1/8 + 1/16)
        let pb = check_product_bound(&inst, &a, 1, 4, 0.0).unwrap();
        assert_eq!(pb.lhs, 0.3125);
        assert_eq!(pb.rhs, 0.0625 + 0.9375);
        assert!(pb.passed);
        assert!(check_product_bound(&inst, &a, 10, 11, 0.0).is_none());
    }

    #[test]
    fn h_bound_hand_instance() {
        let inst = half_geometric();
        let gamma = inst.b.gamma().unwrap();
        let delta = inst.lambda.theta().unwrap().clone();
        let report = check_h_bound(&inst, &gamma, &delta, &[0.5], 100).unwrap();
        assert!(report.all_passed());
        assert_eq!(report.entries[0].h.as_ref().unwrap(), &12u64);
        let a = simulate_recurrence(&inst, 100).unwrap();
        // a_4 = 0.5 exactly, so the sequence sits below 0.5 from n = 5
        assert_eq!((1..=100).find(|&n| (n..=100).all(|k| a[k as usize - 1] < 0.5)), Some(5));
    }

    #[test]
    fn h_bound_trivial_instance() {
        let inst = RecurrenceInstance::new(Schedule::constant(1.0).unwrap(), PerturbationSeq::Zero, 2.5, 3).unwrap();
        let report = check_h_bound(&inst, &inst.b.gamma().unwrap(), inst.lambda.theta().unwrap(), &[1.0, 0.5, 0.1], 50).unwrap();
        assert!(report.all_passed());
        assert!(report.entries.iter().all(|e| e.status == CheckStatus::Pass && *e.h.as_ref().unwrap() >= 2u64));
    }

    #[test]
    fn h_bound_catches_a_lying_modulus() {
        // claims the b-partial sums settle at once, while b_n = 0.4 up to n = 30
        let inst = RecurrenceInstance::with_default_bound(
            Schedule::constant(0.5).unwrap(),
            PerturbationSeq::EventuallyZero { value: 0.4, len: 30 },
            0.0,
        )
        .unwrap();
        let lying = ModulusFn::cauchy(ModulusRule::Constant { value: 1 }).unwrap();
        let report = check_h_bound(&inst, &lying, inst.lambda.theta().unwrap(), &[0.5], 200).unwrap();
        assert!(!report.all_passed(), "{report:?}");
    }

    #[test]
    fn random_instances_are_reproducible() {
        let a = RecurrenceInstance::random(9);
        let b = RecurrenceInstance::random(9);
        assert_eq!(a.describe(), b.describe());
    }

    #[test]
    fn cesaro_examples() {
        let id = NonexpansiveOp::identity(3, 5.0).unwrap();
        let x = Point::new(vec![1.0, -2.0, 3.0]).unwrap();
        assert_eq!(cesaro_oracle(&id, &x, 17).unwrap(), x);

        let half_turn = NonexpansiveOp::planar_rotation(180.0);
        let y = cesaro_oracle(&half_turn, &Point::new(vec![1.0, 0.0]).unwrap(), 1).unwrap();
        assert_eq!(y.as_slice(), &[0.0, 0.0]);

        let ball = NonexpansiveOp::new(OpKind::BallProjection { center: vec![0.0, 0.0], radius: 1.0 }, 2, 1.0, NormSpec::Euclidean).unwrap();
        assert!(matches!(cesaro_oracle(&ball, &Point::new(vec![1.0, 0.0]).unwrap(), 3), Err(Error::Precondition(_))));

        let rot = NonexpansiveOp::new(
            OpKind::Rotation { planes: vec![PlaneRotation { i: 0, j: 1, degrees: 90.0 }] },
            2,
            1.0,
            NormSpec::Euclidean,
        )
        .unwrap();
        // (x + Tx + T^2 x + T^3 x) / 4 = 0 for a quarter turn
        let z = cesaro_oracle(&rot, &Point::new(vec![1.0, 0.0]).unwrap(), 3).unwrap();
        assert_eq!(z.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn cesaro_check_passes_and_rejects() {
        let rot = NonexpansiveOp::planar_rotation(90.0);
        let x = Point::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(check_cesaro(&rot, &x, 200, 1e-9).unwrap().status, CheckStatus::Pass);
        let lin = NonexpansiveOp::random_linear(4, 3).unwrap();
        assert_eq!(check_cesaro(&lin, &Point::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap(), 500, 1e-9).unwrap().evaluated, 501);
        // a negative tolerance rejects even exact agreement
        let x1 = check_cesaro(&rot, &x, 5, -1.0).unwrap();
        assert_eq!((x1.status, x1.witness.unwrap().index), (CheckStatus::Fail, 0));
    }
}
