//! Halpern and Krasnoselski-Mann runs.
//!
//! Halpern: `x_0 = x`, `x_{n+1} = lambda_{n+1} x + (1 - lambda_{n+1}) T x_n`.
//! Krasnoselski-Mann: `x_{n+1} = (1 - lambda_{n+1}) x_n + lambda_{n+1} T x_n`
//! (the schedule is indexed from 1, so step `n -> n+1` uses `lambda_{n+1}`).
//!
//! Each step applies `T` exactly once; the same `T x_n` feeds the residual
//! `r_n = ||x_n - T x_n||` and the update.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::bounds::norm_bound_for_radius;
use crate::error::{Error, Result};
use crate::index::BoundIndex;
use crate::moduli::Schedule;
use crate::operators::{NonexpansiveOp, NormSpec, Point};
use crate::report::{CheckOutcome, VerificationReport, Witness};

/// Iterates kept in memory by default; scalars are always kept.
pub const DEFAULT_ITERATE_CAP: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Halpern,
    KrasnoselskiMann,
}

/// Scalars recorded at index `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub n: u64,
    /// `lambda_n`; absent at `n = 0`.
    pub lambda: Option<f64>,
    /// `||x_n - T x_n||`
    pub residual: f64,
    /// `||x_n - x_{n-1}||`; absent at `n = 0`.
    pub step_gap: Option<f64>,
    pub norm_x: f64,
    pub norm_tx: f64,
    /// `||x - T x_n||` for the anchor `x = x_0`.
    pub anchor_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub scheme: Scheme,
    pub schedule_id: String,
    pub operator_id: String,
    pub norm: NormSpec,
    pub anchor: Point,
    pub horizon: u64,
    /// Radius of the operator's invariant ball, if it declares one.
    pub declared_radius: Option<f64>,
    /// `steps[n]` for `n = 0..=horizon`.
    pub steps: Vec<Step>,
    /// `x_0, x_1, ...` up to the iterate cap.
    pub iterates: Vec<Point>,
}

impl Trajectory {
    pub fn residuals(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.residual)
    }

    pub fn residual(&self, n: u64) -> Option<f64> {
        self.steps.get(n as usize).map(|s| s.residual)
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        write_csv_header(out)?;
        self.steps.iter().try_for_each(|s| write_csv_row(out, s))
    }
}

pub const CSV_HEADER: &str = "n,lambda_n,residual,step_gap,norm_x";

pub fn write_csv_header<W: Write + ?Sized>(out: &mut W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")
}

fn sig17(v: f64) -> String {
    format!("{v:.16e}")
}

/// One CSV row; absent `lambda_n` / `step_gap` at `n = 0` are empty fields.
pub fn write_csv_row<W: Write + ?Sized>(out: &mut W, step: &Step) -> io::Result<()> {
    writeln!(
        out,
        "{},{},{},{},{}",
        step.n,
        step.lambda.map(sig17).unwrap_or_default(),
        sig17(step.residual),
        step.step_gap.map(sig17).unwrap_or_default(),
        sig17(step.norm_x),
    )
}

fn check_anchor(op: &NonexpansiveOp, x: &Point) -> Result<()> {
    if x.dim() != op.dim() {
        return Err(Error::Shape { expected: op.dim(), found: x.dim() });
    }
    if let Some(r) = op.radius() {
        let len = op.norm().norm(x);
        if len > r + 1e-12 * (1.0 + r) {
            return Err(Error::Precondition(format!(
                "anchor has norm {len}, outside the invariant ball of radius {r}"
            )));
        }
    }
    Ok(())
}

/// Runs `horizon` steps, handing every [`Step`] and iterate to `sink`.
/// Nothing is stored.
pub fn run_streaming<F>(scheme: Scheme, op: &NonexpansiveOp, x: &Point, schedule: &Schedule, horizon: u64, mut sink: F) -> Result<()>
where
    F: FnMut(&Step, &[f64]),
{
    check_anchor(op, x)?;
    if horizon == 0 {
        return Err(Error::Domain { name: "horizon", value: "0".into(), domain: "N* = {1, 2, ...}" });
    }
    let norm = op.norm();
    let dim = op.dim();
    let anchor: &[f64] = x;
    let mut cur = anchor.to_vec();
    let mut prev = anchor.to_vec();
    let mut tx = vec![0.0; dim];
    let mut lambda_n = None;

    for n in 0..=horizon {
        op.apply_slice(&cur, &mut tx);
        let step = Step {
            n,
            lambda: lambda_n,
            residual: norm.distance(&cur, &tx),
            step_gap: (n > 0).then(|| norm.distance(&cur, &prev)),
            norm_x: norm.norm(&cur),
            norm_tx: norm.norm(&tx),
            anchor_gap: norm.distance(anchor, &tx),
        };
        if !(step.residual.is_finite() && step.norm_x.is_finite() && step.norm_tx.is_finite()) {
            return Err(Error::NumericBlowup { step: n });
        }
        sink(&step, &cur);
        if n == horizon {
            break;
        }

        let lambda = schedule.lambda_at(n + 1)?;
        std::mem::swap(&mut prev, &mut cur);
        match scheme {
            Scheme::Halpern => {
                for ((c, a), t) in cur.iter_mut().zip(anchor).zip(&tx) {
                    *c = lambda * a + (1.0 - lambda) * t;
                }
            }
            Scheme::KrasnoselskiMann => {
                for ((c, p), t) in cur.iter_mut().zip(&prev).zip(&tx) {
                    *c = (1.0 - lambda) * p + lambda * t;
                }
            }
        }
        lambda_n = Some(lambda);
    }
    Ok(())
}

fn run_recorded(scheme: Scheme, op: &NonexpansiveOp, x: &Point, schedule: &Schedule, horizon: u64, iterate_cap: usize) -> Result<Trajectory> {
    let mut steps = Vec::with_capacity(horizon as usize + 1);
    let mut iterates = Vec::with_capacity((horizon as usize + 1).min(iterate_cap));
    run_streaming(scheme, op, x, schedule, horizon, |step, cur| {
        steps.push(*step);
        if iterates.len() < iterate_cap {
            iterates.push(Point::from_vec_unchecked(cur.to_vec()));
        }
    })?;
    Ok(Trajectory {
        scheme,
        schedule_id: schedule.name(),
        operator_id: op.name(),
        norm: op.norm(),
        anchor: x.clone(),
        horizon,
        declared_radius: op.radius(),
        steps,
        iterates,
    })
}

pub fn halpern_run(op: &NonexpansiveOp, x: &Point, schedule: &Schedule, horizon: u64) -> Result<Trajectory> {
    run_recorded(Scheme::Halpern, op, x, schedule, horizon, DEFAULT_ITERATE_CAP)
}

/// [`halpern_run`] keeping at most `iterate_cap` iterates.
pub fn halpern_run_capped(op: &NonexpansiveOp, x: &Point, schedule: &Schedule, horizon: u64, iterate_cap: usize) -> Result<Trajectory> {
    run_recorded(Scheme::Halpern, op, x, schedule, horizon, iterate_cap)
}

pub fn km_run(op: &NonexpansiveOp, x: &Point, schedule: &Schedule, horizon: u64) -> Result<Trajectory> {
    run_recorded(Scheme::KrasnoselskiMann, op, x, schedule, horizon, DEFAULT_ITERATE_CAP)
}

/// Least `n <= horizon` with `r_n < eps`.
pub fn first_crossing(traj: &Trajectory, eps: f64) -> Option<u64> {
    traj.steps.iter().find(|s| s.residual < eps).map(|s| s.n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MEstimate {
    pub m: u64,
    /// True when `m = max(1, ceil(3R))` comes from a declared invariant ball;
    /// false when it is the observed `ceil(sup ||x_n|| + ||x|| + ||Tx||)`.
    pub certified: bool,
}

/// A norm bound `M >= ||x_n|| + ||x|| + ||Tx||`.
pub fn estimate_m(traj: &Trajectory) -> MEstimate {
    if let Some(m) = traj.declared_radius.and_then(|r| norm_bound_for_radius(r).ok()) {
        return MEstimate { m, certified: true };
    }
    let mut monitor = NormMonitor::default();
    traj.steps.iter().for_each(|s| monitor.observe(s));
    MEstimate { m: monitor.ceiling(), certified: false }
}

/// Running `sup_n ||x_n|| + ||x|| + ||Tx||`.
#[derive(Debug, Clone, Default)]
pub struct NormMonitor {
    anchor_terms: Option<f64>,
    sup: f64,
}

impl NormMonitor {
    pub fn observe(&mut self, step: &Step) {
        let anchor = *self.anchor_terms.get_or_insert(step.norm_x + step.norm_tx);
        self.sup = self.sup.max(step.norm_x + anchor);
    }

    pub fn sup(&self) -> f64 {
        self.sup
    }

    pub fn ceiling(&self) -> u64 {
        (self.sup.ceil() as u64).max(1)
    }
}

/// Online check of the five Halpern-step inequalities. With
/// `g_n = ||x_n - x_{n-1}||`, `r_n = ||x_n - T x_n||`, anchor `x`:
///
/// 1. `||T x_n|| <= ||x_n|| + ||x|| + ||T x||`
/// 2. `r_n <= g_{n+1} + lambda_{n+1} ||x - T x_n||`
/// 3. `g_{n+1} <= (1 - lambda_{n+1}) g_n + |lambda_{n+1} - lambda_n| ||x - T x_{n-1}||`
/// 4. `r_n <= g_{n+1} + 2M lambda_{n+1}`
/// 5. `g_{n+1} <= (1 - lambda_{n+1}) g_n + 2M |lambda_{n+1} - lambda_n|`
///
/// for `n >= 1`; each with slack `tol (1 + |rhs|)`.
#[derive(Debug, Clone)]
pub struct HalpernInequalityChecker {
    m: f64,
    tol: f64,
    anchor_norms: Option<(f64, f64)>,
    window: Vec<Step>,
    evaluated: [u64; 5],
    first_violation: [Option<Witness>; 5],
}

pub const HALPERN_INEQUALITIES: [&str; 5] = [
    "image_norm_bound",
    "residual_by_gap_and_anchor",
    "gap_recurrence_with_anchor",
    "residual_by_gap_and_m",
    "gap_recurrence_with_m",
];

impl HalpernInequalityChecker {
    pub fn new(m: u64, tol: f64) -> Self {
        Self {
            m: m as f64,
            tol,
            anchor_norms: None,
            window: Vec::with_capacity(3),
            evaluated: [0; 5],
            first_violation: Default::default(),
        }
    }

    fn test(&mut self, which: usize, n: u64, lhs: f64, rhs: f64) {
        self.evaluated[which] += 1;
        if self.first_violation[which].is_none() && !(lhs <= rhs + self.tol * (1.0 + rhs.abs())) {
            self.first_violation[which] = Some(Witness { index: n, lhs, rhs });
        }
    }

    /// Feed steps in order `n = 0, 1, 2, ...`.
    pub fn observe(&mut self, step: &Step) {
        let (x_norm, tx_norm) = *self.anchor_norms.get_or_insert((step.norm_x, step.norm_tx));
        if step.n >= 1 {
            self.test(0, step.n, step.norm_tx, step.norm_x + x_norm + tx_norm);
        }
        if self.window.len() == 3 {
            self.window.remove(0);
        }
        self.window.push(*step);
        if self.window.len() < 3 {
            return;
        }
        let (before, at, after) = (self.window[0], self.window[1], self.window[2]);
        let n = at.n;
        let (Some(lam_n), Some(lam_next), Some(gap_n), Some(gap_next)) = (at.lambda, after.lambda, at.step_gap, after.step_gap) else {
            return;
        };
        let dlam = (lam_next - lam_n).abs();
        let two_m = 2.0 * self.m;
        self.test(1, n, at.residual, gap_next + lam_next * at.anchor_gap);
        self.test(2, n, gap_next, (1.0 - lam_next) * gap_n + dlam * before.anchor_gap);
        self.test(3, n, at.residual, gap_next + two_m * lam_next);
        self.test(4, n, gap_next, (1.0 - lam_next) * gap_n + two_m * dlam);
    }

    pub fn report(&self) -> VerificationReport {
        let mut report = VerificationReport::new("halpern step inequalities");
        for (i, name) in HALPERN_INEQUALITIES.iter().enumerate() {
            report.push(match &self.first_violation[i] {
                None if self.evaluated[i] == 0 => CheckOutcome::truncated(*name, None, "trajectory too short"),
                None => CheckOutcome::pass(*name, None, self.evaluated[i]),
                Some(w) => CheckOutcome::fail(*name, None, self.evaluated[i], w.clone()),
            });
        }
        report
    }
}

/// Checks the five Halpern-step inequalities at every recorded step.
/// The caller vouches for `M >= ||x_n|| + ||x|| + ||Tx||`.
pub fn check_halpern_inequalities(traj: &Trajectory, schedule: &Schedule, m: u64, tol: f64) -> VerificationReport {
    if traj.scheme != Scheme::Halpern {
        let mut report = VerificationReport::new("halpern step inequalities");
        report.push(CheckOutcome::fail("scheme", None, 0, Witness { index: 0, lhs: 0.0, rhs: 0.0 }).with_note("not a Halpern trajectory"));
        return report;
    }
    let mut checker = HalpernInequalityChecker::new(m, tol);
    let mut mismatch = None;
    for step in &traj.steps {
        if let (Some(l), Ok(expected)) = (step.lambda, schedule.lambda_at(step.n.max(1))) {
            if mismatch.is_none() && l != expected {
                mismatch = Some(Witness { index: step.n, lhs: l, rhs: expected });
            }
        }
        checker.observe(step);
    }
    let mut report = checker.report();
    if let Some(w) = mismatch {
        report.push(CheckOutcome::fail("schedule_matches_trajectory", None, traj.steps.len() as u64, w));
    }
    report
}

/// Streaming residual bookkeeping for a set of accuracies.
#[derive(Debug, Clone)]
pub struct ResidualMonitor {
    eps: Vec<f64>,
    first_crossing: Vec<Option<u64>>,
    last_at_or_above: Vec<Option<u64>>,
    norms: NormMonitor,
    max_residual: f64,
    last_n: u64,
}

impl ResidualMonitor {
    pub fn new(eps: &[f64]) -> Self {
        Self {
            eps: eps.to_vec(),
            first_crossing: vec![None; eps.len()],
            last_at_or_above: vec![None; eps.len()],
            norms: NormMonitor::default(),
            max_residual: 0.0,
            last_n: 0,
        }
    }

    pub fn observe(&mut self, step: &Step) {
        for (i, &eps) in self.eps.iter().enumerate() {
            if step.residual < eps {
                self.first_crossing[i].get_or_insert(step.n);
            } else {
                self.last_at_or_above[i] = Some(step.n);
            }
        }
        self.norms.observe(step);
        self.max_residual = self.max_residual.max(step.residual);
        self.last_n = step.n;
    }

    pub fn first_crossing(&self, i: usize) -> Option<u64> {
        self.first_crossing[i]
    }

    /// Largest recorded `n` with `r_n >= eps_i`.
    pub fn last_at_or_above(&self, i: usize) -> Option<u64> {
        self.last_at_or_above[i]
    }

    pub fn norms(&self) -> &NormMonitor {
        &self.norms
    }

    pub fn max_residual(&self) -> f64 {
        self.max_residual
    }

    pub fn horizon(&self) -> u64 {
        self.last_n
    }

    /// Compares the certified index against the observed residuals of
    /// accuracy `i`. A run that never reached `eps` is sound whatever the
    /// bound; otherwise a bound past the horizon is untestable.
    pub fn verdict(&self, i: usize, bound: &BoundIndex) -> Verdict {
        let Some(last_bad) = self.last_at_or_above[i] else {
            return Verdict::Sound;
        };
        match bound.to_u64().filter(|&b| b <= self.last_n) {
            None => Verdict::Untestable,
            Some(phi) if last_bad >= phi => Verdict::Violation { index: last_bad },
            Some(_) => Verdict::Sound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    /// `r_n < eps` on all of `[bound, horizon]`, or on the whole run.
    Sound,
    /// The bound lies beyond the horizon.
    Untestable,
    /// Some `n >= bound` had `r_n >= eps`.
    Violation { index: u64 },
}
