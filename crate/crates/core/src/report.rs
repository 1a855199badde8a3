//! Pass/fail reports for the structural conditions the convergence theory relies on.

use std::fmt;

/// A single checked condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    /// Stable identifier, e.g. `fast-hurwitz`.
    pub id: &'static str,
    pub description: String,
    pub passed: bool,
    /// The measured quantity (spectral abscissa, limit value, minimum eigenvalue, ...).
    pub measured: f64,
    /// The threshold the measured quantity was compared against.
    pub threshold: f64,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        id: &'static str,
        description: impl Into<String>,
        passed: bool,
        measured: f64,
        threshold: f64,
    ) -> &mut Check {
        self.checks.push(Check {
            id,
            description: description.into(),
            passed,
            measured,
            threshold,
            note: None,
        });
        self.checks.last_mut().expect("just pushed")
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.checks.extend(other.checks);
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, id: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.id == id)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            write!(
                f,
                "[{}] {:<28} measured={:<+12.6e} threshold={:<+12.6e} {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.id,
                c.measured,
                c.threshold,
                c.description
            )?;
            if let Some(note) = &c.note {
                write!(f, " ({note})")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
