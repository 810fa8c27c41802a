//! The four subcommands. Each loads and validates the config, does its work,
//! writes its reports atomically under the output directory and returns
//! whether every check passed.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use halpern_core::bounds::{h_liu, phi_for_schedule, phi_harmonic, psi_for_schedule};
use halpern_core::iteration::{run_streaming, write_csv_header, write_csv_row, HalpernInequalityChecker, NormMonitor, ResidualMonitor, Scheme, Verdict};
use halpern_core::moduli::{verify_moduli, ScheduleKind};
use halpern_core::operators::check_nonexpansive;
use halpern_core::oracle::{check_cesaro, check_h_bound, RecurrenceInstance};
use halpern_core::report::{CheckOutcome, CheckStatus, Witness};
use halpern_core::{NonexpansiveOp, Point, Schedule, VerificationReport};
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, SchemeName};
use crate::output::{digest, write_json, AtomicFile, Certified, Report, TOOL_VERSION};

/// Longest prefix compared against the Cesàro averages.
const CESARO_STEPS: u64 = 2000;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Core(#[from] halpern_core::Error),
}

/// Common command-line arguments.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub config: PathBuf,
    /// Overrides `output.dir`.
    pub out: Option<PathBuf>,
    /// Overrides `run.seed`.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub passed: bool,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    /// 0 when everything passed, 2 on a violation or failed check.
    pub fn exit_code(&self) -> i32 {
        if self.passed { 0 } else { 2 }
    }
}

struct Loaded {
    cfg: ExperimentConfig,
    digest: String,
    seed: u64,
    out_dir: PathBuf,
}

impl Loaded {
    fn report<T>(&self, command: &'static str, passed: bool, results: Vec<T>) -> Report<T> {
        Report { tool_version: TOOL_VERSION, command, config_digest: self.digest.clone(), seed: self.seed, passed, results }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn load(inv: &Invocation, strict_eps: bool) -> Result<Loaded, CliError> {
    let bytes = std::fs::read(&inv.config).map_err(ConfigError::Io)?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(seed) = inv.seed {
        cfg.run.seed = seed;
    }
    cfg.validate(strict_eps)?;
    let out_dir = inv.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    Ok(Loaded { digest: digest(&bytes), seed: cfg.run.seed, out_dir, cfg })
}

fn missing(field: &str, what: &str) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: format!("schedule has no {what} modulus") }
}

/// The moduli every bound needs: alpha, theta, and beta unless the schedule
/// is decreasing.
fn require_moduli(schedule: &Schedule) -> Result<(), ConfigError> {
    schedule.alpha().map_err(|_| missing("schedule.alpha", "rate-of-convergence"))?;
    schedule.theta().map_err(|_| missing("schedule.theta", "rate-of-divergence"))?;
    schedule.beta().map_err(|_| missing("schedule.beta", "Cauchy"))?;
    Ok(())
}

fn scheme(name: SchemeName) -> Scheme {
    match name {
        SchemeName::Halpern => Scheme::Halpern,
        SchemeName::KrasnoselskiMann => Scheme::KrasnoselskiMann,
    }
}

// ---------------------------------------------------------------- certify

#[derive(Debug, Serialize)]
pub struct CertifyEntry {
    pub eps: f64,
    pub m: u64,
    pub phi: Option<Certified>,
    pub psi: Option<Certified>,
    pub phi_harmonic: Option<Certified>,
    pub h: Option<Certified>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub errors: BTreeMap<&'static str, String>,
}

pub fn certify(inv: &Invocation) -> Result<Outcome, CliError> {
    let ctx = load(inv, false)?;
    let cfg = &ctx.cfg;
    let schedule = cfg.schedule()?;
    require_moduli(&schedule)?;
    let op = cfg.operator()?;
    let (m, _) = cfg.norm_bound(&op)?.ok_or_else(|| ConfigError::Invalid {
        field: "run.m".into(),
        message: "required when neither run.d_c nor operator.radius is given".into(),
    })?;
    let recurrence = cfg.recurrence_instance()?;
    let harmonic = matches!(schedule.kind(), ScheduleKind::Harmonic);

    let mut results = Vec::new();
    for &eps in &cfg.run.eps {
        let mut entry = CertifyEntry { eps, m, phi: None, psi: None, phi_harmonic: None, h: None, errors: BTreeMap::new() };
        if !(eps > 0.0 && eps < 2.0) {
            entry.errors.insert("eps", format!("{eps} is outside (0, 2)"));
            results.push(entry);
            continue;
        }
        let mut record = |key: &'static str, value: halpern_core::Result<halpern_core::BoundIndex>| match value {
            Ok(b) => Some(Certified::from(&b)),
            Err(e) => {
                entry.errors.insert(key, e.to_string());
                None
            }
        };
        let phi = record("phi", phi_for_schedule(&schedule, m, eps));
        let psi = schedule.is_decreasing().then(|| record("psi", psi_for_schedule(&schedule, m, eps))).flatten();
        let phi_h = match (harmonic, cfg.d_c()) {
            (true, Some(d_c)) => record("phi_harmonic", phi_harmonic(d_c, eps)),
            _ => None,
        };
        let h = recurrence.as_ref().and_then(|inst| record("h", certify_h(inst, eps)));
        entry.phi = phi;
        entry.psi = psi;
        entry.phi_harmonic = phi_h;
        entry.h = h;
        results.push(entry);
    }

    let path = ctx.path("certify.json");
    write_json(&path, &ctx.report("certify", true, results))?;
    Ok(Outcome { passed: true, files: vec![path] })
}

fn certify_h(inst: &RecurrenceInstance, eps: f64) -> halpern_core::Result<halpern_core::BoundIndex> {
    h_liu(&inst.b.gamma()?, inst.lambda.theta()?, inst.d, eps)
}

// ---------------------------------------------------------------- runs

#[derive(Debug, Clone, Serialize)]
pub struct NormBound {
    pub m: u64,
    /// False when `m` was read off the trajectory rather than certified.
    pub certified: bool,
    pub source: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunFailure {
    pub step: Option<u64>,
    pub error: String,
}

struct RunRecord {
    monitor: ResidualMonitor,
    m: NormBound,
    inequalities: Option<VerificationReport>,
    failure: Option<RunFailure>,
    final_residual: Option<f64>,
}

fn failure(e: halpern_core::Error) -> RunFailure {
    let step = match e {
        halpern_core::Error::NumericBlowup { step } => Some(step),
        _ => None,
    };
    RunFailure { step, error: e.to_string() }
}

struct RunPlan<'a> {
    scheme: Scheme,
    op: &'a NonexpansiveOp,
    anchor: &'a Point,
    schedule: &'a Schedule,
    horizon: u64,
    eps: &'a [f64],
    bound: Option<(u64, &'static str)>,
    /// Tolerance for the online inequality check; `None` skips it.
    check_tol: Option<f64>,
}

/// Streams one run, optionally into a CSV. When no `M` is configured and the
/// inequality check needs one, a first pass measures it.
fn execute(plan: &RunPlan, mut csv: Option<&mut dyn Write>) -> Result<RunRecord, CliError> {
    let check = plan.check_tol.filter(|_| plan.scheme == Scheme::Halpern);
    let mut pre_failure = None;
    let m = match plan.bound {
        Some((m, source)) => NormBound { m, certified: true, source },
        None if check.is_some() => {
            let mut norms = NormMonitor::default();
            if let Err(e) = run_streaming(plan.scheme, plan.op, plan.anchor, plan.schedule, plan.horizon, |s, _| norms.observe(s)) {
                pre_failure = Some(failure(e));
            }
            NormBound { m: norms.ceiling(), certified: false, source: "trajectory" }
        }
        None => NormBound { m: 0, certified: false, source: "trajectory" },
    };

    let mut monitor = ResidualMonitor::new(plan.eps);
    if let Some(f) = pre_failure {
        return Ok(RunRecord { monitor, m, inequalities: None, failure: Some(f), final_residual: None });
    }
    let mut checker = check.map(|tol| HalpernInequalityChecker::new(m.m.max(1), tol));
    let mut io_error = None;
    if let Some(w) = csv.as_deref_mut() {
        write_csv_header(w)?;
    }
    let mut last = None;
    let result = run_streaming(plan.scheme, plan.op, plan.anchor, plan.schedule, plan.horizon, |step, _| {
        monitor.observe(step);
        if let Some(c) = checker.as_mut() {
            c.observe(step);
        }
        if let (Some(w), None) = (csv.as_deref_mut(), &io_error) {
            if let Err(e) = write_csv_row(w, step) {
                io_error = Some(e);
            }
        }
        last = Some(step.residual);
    });
    if let Some(e) = io_error {
        return Err(e.into());
    }
    let m = if plan.bound.is_none() {
        NormBound { m: monitor.norms().ceiling(), ..m }
    } else {
        m
    };
    Ok(RunRecord {
        monitor,
        m,
        inequalities: checker.map(|c| c.report()),
        failure: result.err().map(failure),
        final_residual: last,
    })
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Serialize)]
pub struct Crossing {
    pub eps: f64,
    pub first_crossing: Option<u64>,
}

#[derive(Debug, Serialize)]
pub struct SimulateResult {
    pub scheme: Scheme,
    pub schedule: String,
    pub operator: String,
    pub horizon: u64,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<RunFailure>,
    pub steps_recorded: u64,
    pub first_crossings: Vec<Crossing>,
    pub max_residual: f64,
    pub final_residual: Option<f64>,
    pub empirical_m: NormBound,
    pub inequalities: Option<VerificationReport>,
    pub csv: Option<String>,
}

pub fn simulate(inv: &Invocation) -> Result<Outcome, CliError> {
    let ctx = load(inv, true)?;
    let cfg = &ctx.cfg;
    let schedule = cfg.schedule()?;
    let op = cfg.operator()?;
    let anchor = cfg.anchor()?;
    let plan = RunPlan {
        scheme: scheme(cfg.run.scheme),
        op: &op,
        anchor: &anchor,
        schedule: &schedule,
        horizon: cfg.run.horizon,
        eps: &cfg.run.eps,
        bound: cfg.norm_bound(&op)?,
        check_tol: Some(cfg.verify.tol),
    };

    let mut files = Vec::new();
    let csv_path = ctx.path("trajectory.csv");
    let record = if cfg.output.wants("csv") {
        let mut file = AtomicFile::create(&csv_path)?;
        let record = execute(&plan, Some(&mut file))?;
        file.commit()?;
        files.push(csv_path.clone());
        record
    } else {
        execute(&plan, None)?
    };

    let steps_recorded = if record.final_residual.is_some() { record.monitor.horizon() + 1 } else { 0 };
    let passed = record.failure.is_none() && record.inequalities.as_ref().is_none_or(|r| r.all_passed());
    let result = SimulateResult {
        scheme: plan.scheme,
        schedule: schedule.name(),
        operator: op.name(),
        horizon: plan.horizon,
        status: if record.failure.is_none() { "completed" } else { "failed" },
        failure: record.failure,
        steps_recorded,
        first_crossings: cfg.run.eps.iter().enumerate().map(|(i, &eps)| Crossing { eps, first_crossing: record.monitor.first_crossing(i) }).collect(),
        max_residual: record.monitor.max_residual(),
        final_residual: record.final_residual,
        empirical_m: record.m,
        inequalities: record.inequalities,
        csv: files.first().map(|p| file_name(p)),
    };
    let path = ctx.path("simulate.json");
    write_json(&path, &ctx.report("simulate", passed, vec![result]))?;
    files.push(path);
    Ok(Outcome { passed, files })
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

// ---------------------------------------------------------------- compare

#[derive(Debug, Serialize)]
pub struct CompareEntry {
    pub eps: f64,
    /// `psi` for decreasing schedules, `phi` otherwise.
    pub bound_kind: &'static str,
    pub bound: Option<Certified>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound_error: Option<String>,
    pub m: NormBound,
    pub horizon: u64,
    pub first_crossing: Option<u64>,
    /// Largest `n` with `r_n >= eps`.
    pub last_at_or_above: Option<u64>,
    #[serde(flatten)]
    pub verdict: Verdict,
}

pub fn compare(inv: &Invocation) -> Result<Outcome, CliError> {
    let ctx = load(inv, true)?;
    let cfg = &ctx.cfg;
    if cfg.run.scheme != SchemeName::Halpern {
        return Err(ConfigError::Invalid { field: "run.scheme".into(), message: "certified bounds apply to the Halpern scheme only".into() }.into());
    }
    let schedule = cfg.schedule()?;
    require_moduli(&schedule)?;
    let op = cfg.operator()?;
    let anchor = cfg.anchor()?;
    let plan = RunPlan {
        scheme: Scheme::Halpern,
        op: &op,
        anchor: &anchor,
        schedule: &schedule,
        horizon: cfg.run.horizon,
        eps: &cfg.run.eps,
        bound: cfg.norm_bound(&op)?,
        check_tol: None,
    };
    let record = execute(&plan, None)?;
    if let Some(f) = record.failure {
        let path = ctx.path("compare.json");
        write_json(&path, &ctx.report("compare", false, vec![f]))?;
        return Ok(Outcome { passed: false, files: vec![path] });
    }

    let decreasing = schedule.is_decreasing();
    let results: Vec<CompareEntry> = cfg
        .run
        .eps
        .iter()
        .enumerate()
        .map(|(i, &eps)| {
            let bound = if decreasing { psi_for_schedule(&schedule, record.m.m, eps) } else { phi_for_schedule(&schedule, record.m.m, eps) };
            let (bound, bound_error, verdict) = match bound {
                Ok(b) => (Some(Certified::from(&b)), None, record.monitor.verdict(i, &b)),
                Err(e) => (None, Some(e.to_string()), Verdict::Untestable),
            };
            CompareEntry {
                eps,
                bound_kind: if decreasing { "psi" } else { "phi" },
                bound,
                bound_error,
                m: record.m.clone(),
                horizon: plan.horizon,
                first_crossing: record.monitor.first_crossing(i),
                last_at_or_above: record.monitor.last_at_or_above(i),
                verdict,
            }
        })
        .collect();
    let passed = results.iter().all(|e| !matches!(e.verdict, Verdict::Violation { .. }));
    let path = ctx.path("compare.json");
    write_json(&path, &ctx.report("compare", passed, results))?;
    Ok(Outcome { passed, files: vec![path] })
}

// ---------------------------------------------------------------- verify

#[derive(Debug, Serialize)]
pub struct Component {
    pub component: &'static str,
    pub passed: bool,
    #[serde(flatten)]
    pub report: VerificationReport,
}

impl Component {
    fn new(component: &'static str, report: VerificationReport) -> Self {
        Self { component, passed: report.all_passed(), report }
    }
}

pub fn verify(inv: &Invocation) -> Result<Outcome, CliError> {
    let ctx = load(inv, true)?;
    let cfg = &ctx.cfg;
    let v = &cfg.verify;
    let schedule = cfg.schedule()?;
    let op = cfg.operator()?;
    let anchor = cfg.anchor()?;

    let mut results = vec![
        Component::new("moduli", verify_moduli(&schedule, v.moduli_horizon, &v.moduli_eps)),
        Component::new("nonexpansive", check_nonexpansive(&op, v.nonexpansive_trials, ctx.seed, v.tol)),
    ];

    let plan = RunPlan {
        scheme: Scheme::Halpern,
        op: &op,
        anchor: &anchor,
        schedule: &schedule,
        horizon: v.trajectory_horizon,
        eps: &[],
        bound: cfg.norm_bound(&op)?,
        check_tol: Some(v.tol),
    };
    let record = execute(&plan, None)?;
    let mut inequalities = record.inequalities.unwrap_or_else(|| VerificationReport::new("halpern step inequalities"));
    if let Some(f) = record.failure {
        inequalities.push(CheckOutcome::fail("run", None, 0, Witness { index: f.step.unwrap_or(0), lhs: f64::NAN, rhs: f64::NAN }).with_note(f.error));
    }
    results.push(Component::new("halpern_inequalities", inequalities));

    results.push(Component::new("recurrence_oracle", oracle_sweep(ctx.seed, v.oracle_seeds, &v.oracle_eps, v.oracle_horizon)));
    if let Some(inst) = cfg.recurrence_instance()? {
        let report = match (inst.b.gamma(), inst.lambda.theta()) {
            (Ok(gamma), Ok(theta)) => check_h_bound(&inst, &gamma, theta, &v.oracle_eps, v.oracle_horizon)?.to_verification(),
            (g, t) => {
                let mut r = VerificationReport::new(inst.describe());
                let e = g.err().or(t.err()).map(|e| e.to_string()).unwrap_or_default();
                r.push(CheckOutcome::truncated("h_bound", None, e));
                r
            }
        };
        results.push(Component::new("configured_recurrence", report));
    }

    if op.is_linear() {
        let mut report = VerificationReport::new(format!("cesaro identity for {}", op.name()));
        let n = CESARO_STEPS.min(v.trajectory_horizon);
        report.push(match check_cesaro(&op, &anchor, n, v.tol) {
            Ok(o) => o,
            Err(e) => CheckOutcome::truncated("cesaro_identity", None, e.to_string()),
        });
        results.push(Component::new("cesaro", report));
    }

    let passed = results.iter().all(|c| c.passed);
    let path = ctx.path("verify.json");
    write_json(&path, &ctx.report("verify", passed, results))?;
    Ok(Outcome { passed, files: vec![path] })
}

/// `count` random recurrence instances seeded from `seed`; one aggregated
/// outcome per accuracy plus one for boundedness.
pub fn oracle_sweep(seed: u64, count: u64, eps: &[f64], horizon: u64) -> VerificationReport {
    let mut report = VerificationReport::new(format!("{count} random recurrence instances, horizon {horizon}"));
    let mut bounded = Tally::default();
    let mut per_eps: Vec<Tally> = eps.iter().map(|_| Tally::default()).collect();
    for i in 0..count {
        let inst = RecurrenceInstance::random(seed.wrapping_add(i));
        let checked = inst.b.gamma().and_then(|g| check_h_bound(&inst, &g, inst.lambda.theta()?, eps, horizon));
        let hr = match checked {
            Ok(hr) => hr,
            Err(e) => {
                bounded.fail(Witness { index: 0, lhs: f64::NAN, rhs: f64::NAN }, format!("{}: {e}", inst.describe()));
                continue;
            }
        };
        bounded.add(&hr.boundedness.status, hr.boundedness.witness.clone(), &inst);
        for (t, entry) in per_eps.iter_mut().zip(&hr.entries) {
            t.add(&entry.status, entry.witness.clone(), &inst);
        }
    }
    report.push(bounded.outcome("bounded", None));
    for (t, &e) in per_eps.into_iter().zip(eps) {
        report.push(t.outcome("h_bound", Some(e)));
    }
    report
}

#[derive(Default)]
struct Tally {
    passed: u64,
    truncated: u64,
    first_failure: Option<(Witness, String)>,
    failures: u64,
}

impl Tally {
    fn add(&mut self, status: &CheckStatus, witness: Option<Witness>, inst: &RecurrenceInstance) {
        match status {
            CheckStatus::Pass => self.passed += 1,
            CheckStatus::Truncated => self.truncated += 1,
            CheckStatus::Fail => self.fail(witness.unwrap_or(Witness { index: 0, lhs: f64::NAN, rhs: f64::NAN }), inst.describe()),
        }
    }

    fn fail(&mut self, witness: Witness, note: String) {
        self.failures += 1;
        self.first_failure.get_or_insert((witness, note));
    }

    fn outcome(self, check: &str, parameter: Option<f64>) -> CheckOutcome {
        let summary = format!("{} passed, {} beyond horizon, {} failed", self.passed, self.truncated, self.failures);
        match self.first_failure {
            Some((w, instance)) => CheckOutcome::fail(check, parameter, self.passed + self.failures, w).with_note(format!("{summary}; first: {instance}")),
            None if self.passed == 0 && self.truncated > 0 => CheckOutcome::truncated(check, parameter, summary),
            None => CheckOutcome::pass(check, parameter, self.passed).with_note(summary),
        }
    }
}
