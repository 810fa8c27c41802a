//! Experiment configuration (TOML).
//!
//! ```toml
//! [schedule]
//! kind = "inverse_sqrt"           # harmonic | shifted_harmonic | inverse_sqrt | constant | custom
//! # value = 0.5                   # constant
//! # scale = 1.0, power = 0.75, shift = 0.0, decreasing = true   # custom: scale / (n + shift)^power
//! # [schedule.theta]              # optional modulus overrides (alpha, beta, theta)
//! # rule = "linear"
//! # rate = 1.0
//!
//! [operator]
//! kind = "rotation"               # identity | ball_projection | box_projection | halfspace_projection
//! planes = [{ i = 0, j = 1, degrees = 90.0 }]   # | rotation | averaged_affine | composition
//! dim = 2
//! radius = 1.0                    # invariant ball; omit for none
//! norm = "euclidean"              # euclidean | max | sum
//!
//! [run]
//! anchor = [1.0, 0.0]
//! horizon = 100000
//! eps = [0.5, 0.25]
//! ```

use std::path::PathBuf;

use halpern_core::bounds::norm_bound_for_radius;
use halpern_core::moduli::CustomRule;
use halpern_core::operators::OpKind;
use halpern_core::oracle::{PerturbationSeq, RecurrenceInstance};
use halpern_core::{ModulusFn, ModulusKind, ModulusRule, NonexpansiveOp, NormSpec, Point, Schedule};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config syntax: {0}")]
    Parse(String),
    #[error("config field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schedule: ScheduleSpec,
    pub operator: OperatorSpec,
    pub run: RunSpec,
    #[serde(default)]
    pub recurrence: Option<RecurrenceSpec>,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleName {
    Harmonic,
    ShiftedHarmonic,
    InverseSqrt,
    Constant,
    Custom,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleName,
    /// `constant` only.
    pub value: Option<f64>,
    /// `custom` only: `lambda_n = scale / (n + shift)^power`.
    pub scale: Option<f64>,
    pub power: Option<f64>,
    pub shift: Option<f64>,
    pub decreasing: Option<bool>,
    pub alpha: Option<ModulusRule>,
    pub beta: Option<ModulusRule>,
    pub theta: Option<ModulusRule>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorSpec {
    #[serde(flatten)]
    pub map: OpKind,
    pub dim: usize,
    pub radius: Option<f64>,
    #[serde(default)]
    pub norm: NormSpec,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    #[default]
    Halpern,
    KrasnoselskiMann,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub anchor: Vec<f64>,
    pub horizon: u64,
    pub eps: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scheme: SchemeName,
    /// Norm bound `M >= ||x_n|| + ||x|| + ||Tx||`. Takes precedence over
    /// `d_c` and the operator radius.
    pub m: Option<u64>,
    /// `sup ||y||` over the domain; gives `M = max(1, ceil(3 d_c))`.
    pub d_c: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationName {
    Zero,
    Geometric,
    EventuallyZero,
}

/// A recurrence `a_{n+1} <= (1 - lambda_{n+1}) a_n + b_n` over the configured
/// schedule, for the `h` certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecurrenceSpec {
    pub b: PerturbationName,
    pub ratio: Option<f64>,
    pub value: Option<f64>,
    pub len: Option<u64>,
    #[serde(default)]
    pub a1: f64,
    pub d: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    pub moduli_horizon: u64,
    pub moduli_eps: Vec<f64>,
    pub nonexpansive_trials: u64,
    pub trajectory_horizon: u64,
    pub oracle_seeds: u64,
    pub oracle_horizon: u64,
    pub oracle_eps: Vec<f64>,
    pub tol: f64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            moduli_horizon: 1_000_000,
            moduli_eps: vec![1e-1, 1e-2, 1e-3],
            nonexpansive_trials: 1000,
            trajectory_horizon: 100_000,
            oracle_seeds: 100,
            oracle_horizon: 100_000,
            oracle_eps: vec![1.0, 0.5, 0.1, 0.01],
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub formats: Vec<String>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            formats: vec!["json".into(), "csv".into()],
        }
    }
}

impl OutputSpec {
    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Checks cross-field invariants. With `strict_eps`, every accuracy must
    /// lie in `(0, 2)`; otherwise only positivity is required and
    /// out-of-range values are left to per-eps reporting.
    pub fn validate(&self, strict_eps: bool) -> Result<(), ConfigError> {
        if self.run.horizon == 0 {
            return Err(invalid("run.horizon", "must be at least 1"));
        }
        for (i, &eps) in self.run.eps.iter().enumerate() {
            let ok = if strict_eps { eps > 0.0 && eps < 2.0 } else { eps.is_finite() && eps > 0.0 };
            if !ok {
                let domain = if strict_eps { "(0, 2)" } else { "(0, inf)" };
                return Err(invalid(format!("run.eps[{i}]"), format!("{eps} is outside {domain}")));
            }
        }
        if self.run.anchor.len() != self.operator.dim {
            return Err(invalid(
                "run.anchor",
                format!("has dimension {}, operator.dim is {}", self.run.anchor.len(), self.operator.dim),
            ));
        }
        if self.run.m == Some(0) {
            return Err(invalid("run.m", "must be at least 1"));
        }
        if let Some(d_c) = self.run.d_c {
            if !(d_c.is_finite() && d_c >= 0.0) {
                return Err(invalid("run.d_c", format!("{d_c} is not a finite nonnegative radius")));
            }
        }
        if self.verify.moduli_horizon == 0 || self.verify.trajectory_horizon == 0 || self.verify.oracle_horizon == 0 {
            return Err(invalid("verify", "horizons must be at least 1"));
        }
        if let Some((i, eps)) = self.verify.moduli_eps.iter().enumerate().find(|(_, e)| !(**e > 0.0 && e.is_finite())) {
            return Err(invalid(format!("verify.moduli_eps[{i}]"), format!("{eps} is not positive")));
        }
        if let Some((i, eps)) = self.verify.oracle_eps.iter().enumerate().find(|(_, e)| !(**e > 0.0 && e.is_finite())) {
            return Err(invalid(format!("verify.oracle_eps[{i}]"), format!("{eps} is not positive")));
        }
        self.schedule()?;
        self.operator()?;
        self.anchor()?;
        if self.recurrence.is_some() {
            self.recurrence_instance()?;
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<Schedule, ConfigError> {
        let spec = &self.schedule;
        let base = match spec.kind {
            ScheduleName::Harmonic => Schedule::harmonic(),
            ScheduleName::ShiftedHarmonic => Schedule::shifted_harmonic(),
            ScheduleName::InverseSqrt => Schedule::inverse_sqrt(),
            ScheduleName::Constant => {
                let c = spec.value.ok_or_else(|| invalid("schedule.value", "required for a constant schedule"))?;
                Schedule::constant(c).map_err(|e| invalid("schedule.value", e))?
            }
            ScheduleName::Custom => {
                let scale = spec.scale.unwrap_or(1.0);
                let power = spec.power.ok_or_else(|| invalid("schedule.power", "required for a custom schedule"))?;
                let shift = spec.shift.unwrap_or(0.0);
                if !(scale.is_finite() && power.is_finite() && shift.is_finite() && shift > -1.0) {
                    return Err(invalid("schedule", "custom scale/power/shift must be finite with shift > -1"));
                }
                let name = format!("custom({scale}/(n+{shift})^{power})");
                let rule = CustomRule::new(name, move |n| scale / (n as f64 + shift).powf(power));
                Schedule::custom(rule, spec.decreasing.unwrap_or(false))
            }
        };
        let mut schedule = base;
        for (field, kind, rule) in [
            ("schedule.alpha", ModulusKind::RateOfConvergence, &spec.alpha),
            ("schedule.beta", ModulusKind::CauchyModulus, &spec.beta),
            ("schedule.theta", ModulusKind::RateOfDivergence, &spec.theta),
        ] {
            let Some(rule) = rule else { continue };
            let modulus = ModulusFn::new(kind, rule.clone()).map_err(|e| invalid(field, e))?;
            schedule = match kind {
                ModulusKind::RateOfConvergence => schedule.with_alpha(modulus),
                ModulusKind::CauchyModulus => schedule.with_beta(modulus),
                ModulusKind::RateOfDivergence => schedule.with_theta(modulus),
            }
            .map_err(|e| invalid(field, e))?;
        }
        Ok(schedule)
    }

    pub fn operator(&self) -> Result<NonexpansiveOp, ConfigError> {
        let spec = &self.operator;
        match spec.radius {
            Some(r) => NonexpansiveOp::new(spec.map.clone(), spec.dim, r, spec.norm),
            None => NonexpansiveOp::without_invariant_ball(spec.map.clone(), spec.dim, spec.norm),
        }
        .map_err(|e| invalid("operator", e))
    }

    /// `M` with where it came from, or `None` when nothing certifies one.
    pub fn norm_bound(&self, op: &NonexpansiveOp) -> Result<Option<(u64, &'static str)>, ConfigError> {
        if let Some(m) = self.run.m {
            return Ok(Some((m, "run.m")));
        }
        let (radius, source) = match (self.run.d_c, op.radius()) {
            (Some(d), _) => (d, "run.d_c"),
            (None, Some(r)) => (r, "operator.radius"),
            (None, None) => return Ok(None),
        };
        norm_bound_for_radius(radius).map(|m| Some((m, source))).map_err(|e| invalid(source, e))
    }

    /// The radius used for the harmonic closed form.
    pub fn d_c(&self) -> Option<f64> {
        self.run.d_c.or(self.operator.radius)
    }

    pub fn anchor(&self) -> Result<Point, ConfigError> {
        Point::new(self.run.anchor.clone()).map_err(|e| invalid("run.anchor", e))
    }

    pub fn recurrence_instance(&self) -> Result<Option<RecurrenceInstance>, ConfigError> {
        let Some(spec) = &self.recurrence else { return Ok(None) };
        let b = match spec.b {
            PerturbationName::Zero => PerturbationSeq::Zero,
            PerturbationName::Geometric => PerturbationSeq::Geometric {
                ratio: spec.ratio.ok_or_else(|| invalid("recurrence.ratio", "required for geometric b"))?,
            },
            PerturbationName::EventuallyZero => PerturbationSeq::EventuallyZero {
                value: spec.value.ok_or_else(|| invalid("recurrence.value", "required for eventually_zero b"))?,
                len: spec.len.ok_or_else(|| invalid("recurrence.len", "required for eventually_zero b"))?,
            },
        };
        let schedule = self.schedule()?;
        match spec.d {
            Some(d) => RecurrenceInstance::new(schedule, b, spec.a1, d),
            None => RecurrenceInstance::with_default_bound(schedule, b, spec.a1),
        }
        .map(Some)
        .map_err(|e| invalid("recurrence", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROTATION: &str = r#"
[schedule]
kind = "harmonic"

[operator]
kind = "rotation"
planes = [{ i = 0, j = 1, degrees = 90 }]
dim = 2
radius = 1.0

[run]
anchor = [1.0, 0.0]
horizon = 1000
eps = [0.5, 0.25]
"#;

    #[test]
    fn parses_rotation_config() {
        let cfg = ExperimentConfig::from_toml(ROTATION).unwrap();
        cfg.validate(true).unwrap();
        let op = cfg.operator().unwrap();
        assert_eq!(op.dim(), 2);
        assert_eq!(op.apply(&cfg.anchor().unwrap()).unwrap().as_slice(), &[0.0, 1.0]);
        assert_eq!(cfg.schedule().unwrap().name(), "harmonic");
        assert_eq!(cfg.output.dir, PathBuf::from("out"));
    }

    #[test]
    fn eps_domain_depends_on_strictness() {
        let cfg = ExperimentConfig::from_toml(&ROTATION.replace("eps = [0.5, 0.25]", "eps = [3.0]")).unwrap();
        let err = cfg.validate(true).unwrap_err();
        assert!(err.to_string().contains("run.eps[0]"), "{err}");
        cfg.validate(false).unwrap();
    }

    #[test]
    fn anchor_dimension_checked() {
        let cfg = ExperimentConfig::from_toml(&ROTATION.replace("anchor = [1.0, 0.0]", "anchor = [1.0]")).unwrap();
        assert!(cfg.validate(true).unwrap_err().to_string().contains("run.anchor"));
    }

    #[test]
    fn unknown_fields_and_bad_kinds_rejected() {
        assert!(ExperimentConfig::from_toml(&ROTATION.replace("horizon = 1000", "horizon = 1000\nhorizn = 3")).is_err());
        assert!(ExperimentConfig::from_toml(&ROTATION.replace("kind = \"harmonic\"", "kind = \"cubic\"")).is_err());
    }

    #[test]
    fn custom_schedule_with_overridden_theta() {
        let text = ROTATION.replace(
            "kind = \"harmonic\"",
            "kind = \"custom\"\npower = 1.0\nshift = 1.0\ndecreasing = true\ntheta = { rule = \"exponential\", base = 4 }",
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let s = cfg.schedule().unwrap();
        assert_eq!(s.lambda_at(1).unwrap(), 0.5);
        assert_eq!(s.theta_of(2).unwrap(), 16u64);
        assert!(s.alpha().is_err());
    }

    #[test]
    fn modulus_of_wrong_kind_names_field() {
        let text = ROTATION.replace("kind = \"harmonic\"", "kind = \"harmonic\"\ntheta = { rule = \"constant\", value = 3 }");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let err = cfg.validate(true).unwrap_err().to_string();
        assert!(err.contains("schedule.theta"), "{err}");
    }
}
