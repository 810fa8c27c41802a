//! Pass/fail reports shared by every empirical check in the crate.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The check needed indices beyond the horizon and was not run (or was
    /// cut short). Not a failure.
    Truncated,
}

/// A concrete point where an inequality `lhs <= rhs` (or `lhs < rhs`) was
/// evaluated, usually the first violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub index: u64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub check: String,
    /// The eps or n this outcome is about, if any.
    pub parameter: Option<f64>,
    pub status: CheckStatus,
    /// Number of individual inequalities evaluated.
    pub evaluated: u64,
    pub witness: Option<Witness>,
    #[serde(skip_serializing_if = "String::is_empty", default)]
    pub note: String,
}

impl CheckOutcome {
    pub fn pass(check: impl Into<String>, parameter: Option<f64>, evaluated: u64) -> Self {
        Self {
            check: check.into(),
            parameter,
            status: CheckStatus::Pass,
            evaluated,
            witness: None,
            note: String::new(),
        }
    }

    pub fn fail(
        check: impl Into<String>,
        parameter: Option<f64>,
        evaluated: u64,
        witness: Witness,
    ) -> Self {
        Self {
            check: check.into(),
            parameter,
            status: CheckStatus::Fail,
            evaluated,
            witness: Some(witness),
            note: String::new(),
        }
    }

    pub fn truncated(check: impl Into<String>, parameter: Option<f64>, note: impl Into<String>) -> Self {
        Self {
            check: check.into(),
            parameter,
            status: CheckStatus::Truncated,
            evaluated: 0,
            witness: None,
            note: note.into(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub subject: String,
    pub outcomes: Vec<CheckOutcome>,
}

impl VerificationReport {
    pub fn new(subject: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            outcomes: Vec::new(),
        }
    }

    pub fn push(&mut self, outcome: CheckOutcome) {
        self.outcomes.push(outcome);
    }

    pub fn merge(&mut self, other: VerificationReport) {
        self.outcomes.extend(other.outcomes);
    }

    /// True when no outcome failed. Truncated outcomes do not count against.
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.status != CheckStatus::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.outcomes.iter().filter(|o| o.status == CheckStatus::Fail)
    }

    pub fn count(&self, status: CheckStatus) -> usize {
        self.outcomes.iter().filter(|o| o.status == status).count()
    }
}
