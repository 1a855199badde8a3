//! Deterministic step-size sequences of the power family
//! `base / (1 + k/tau)^alpha` and the limits the covariance theory needs.
//!
//! Two limits matter downstream:
//!
//! * `epsilon = lim beta_k / gamma_k`, the time-scale separation;
//! * `beta_bar = lim (1/beta_{k+1} - 1/beta_k)`, which shifts the slow
//!   Lyapunov equation by `-beta_bar * Sigma`.
//!
//! Both are computed in closed form from the parameters. Numerical limits are
//! only used by tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::ValidationReport;

/// Raw schedule parameters as they appear in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub base: f64,
    pub tau: f64,
    pub alpha: f64,
}

impl ScheduleParams {
    pub fn new(base: f64, tau: f64, alpha: f64) -> Self {
        Self { base, tau, alpha }
    }

    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.base.is_finite() && self.base > 0.0) {
            out.push(format!("base must be positive and finite, got {}", self.base));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            out.push(format!("tau must be positive and finite, got {}", self.tau));
        }
        if !(self.alpha > 0.5 && self.alpha <= 1.0) {
            out.push(format!("alpha must lie in (1/2, 1], got {}", self.alpha));
        }
        out
    }
}

/// `value(k) = base / (1 + k/horizon_scale)^exponent`, with exponent in (1/2, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    base: f64,
    horizon_scale: f64,
    exponent: f64,
}

impl StepSchedule {
    pub fn new(base: f64, horizon_scale: f64, exponent: f64) -> Result<Self> {
        let params = ScheduleParams::new(base, horizon_scale, exponent);
        let problems = params.problems();
        if !problems.is_empty() {
            return Err(Error::InvalidSchedule(problems.join("; ")));
        }
        Ok(Self {
            base,
            horizon_scale,
            exponent,
        })
    }

    pub fn from_params(p: ScheduleParams) -> Result<Self> {
        Self::new(p.base, p.tau, p.alpha)
    }

    pub fn params(&self) -> ScheduleParams {
        ScheduleParams::new(self.base, self.horizon_scale, self.exponent)
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn horizon_scale(&self) -> f64 {
        self.horizon_scale
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    /// Step size at iteration `k`.
    #[inline]
    pub fn value(&self, k: u64) -> f64 {
        let t = 1.0 + k as f64 / self.horizon_scale;
        if self.exponent == 1.0 {
            self.base / t
        } else {
            self.base / t.powf(self.exponent)
        }
    }

    /// `lim (1/value(k+1) - 1/value(k))`: `1/(tau*base)` for exponent 1, zero otherwise.
    pub fn inverse_increment_limit(&self) -> f64 {
        if self.exponent == 1.0 {
            1.0 / (self.horizon_scale * self.base)
        } else {
            0.0
        }
    }

    /// Values `value(0), ..., value(last)`.
    pub fn table(&self, last: u64) -> Vec<f64> {
        (0..=last).map(|k| self.value(k)).collect()
    }
}

/// Slow limit `beta_bar` of a schedule.
pub fn beta_bar_limit(schedule: &StepSchedule) -> f64 {
    schedule.inverse_increment_limit()
}

/// `lim beta_k / gamma_k` for the slow schedule `beta` and fast schedule `gamma`.
pub fn epsilon_limit(slow: &StepSchedule, fast: &StepSchedule) -> Result<f64> {
    if slow.exponent > fast.exponent {
        Ok(0.0)
    } else if slow.exponent == fast.exponent {
        // (1 + k/tau_g)^a / (1 + k/tau_b)^a -> (tau_b / tau_g)^a
        Ok(slow.base / fast.base * (slow.horizon_scale / fast.horizon_scale).powf(slow.exponent))
    } else {
        Err(Error::DivergentRatio {
            slow: slow.exponent,
            fast: fast.exponent,
        })
    }
}

/// A slow/fast schedule pair together with its analytic limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulePair {
    pub slow: StepSchedule,
    pub fast: StepSchedule,
    pub epsilon: f64,
    pub beta_bar: f64,
}

impl SchedulePair {
    pub fn new(slow: StepSchedule, fast: StepSchedule) -> Result<Self> {
        let epsilon = epsilon_limit(&slow, &fast)?;
        Ok(Self {
            slow,
            fast,
            epsilon,
            beta_bar: beta_bar_limit(&slow),
        })
    }

    pub fn from_params(slow: ScheduleParams, fast: ScheduleParams) -> Result<Self> {
        Self::new(StepSchedule::from_params(slow)?, StepSchedule::from_params(fast)?)
    }

    #[inline]
    pub fn beta(&self, k: u64) -> f64 {
        self.slow.value(k)
    }

    #[inline]
    pub fn gamma(&self, k: u64) -> f64 {
        self.fast.value(k)
    }

    /// Precomputed `(beta_k, gamma_k)` for `k = 0..=last`.
    pub fn table(&self, last: u64) -> ScheduleTable {
        ScheduleTable {
            beta: self.slow.table(last),
            gamma: self.fast.table(last),
        }
    }

    pub fn validate(&self) -> ValidationReport {
        validate_schedules(&self.slow.params(), &self.fast.params())
    }
}

/// Step sizes tabulated once and shared by every replica of an ensemble.
#[derive(Debug, Clone)]
pub struct ScheduleTable {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// Check the step-size conditions on raw parameters. Failures are reported, never raised.
pub fn validate_schedules(slow: &ScheduleParams, fast: &ScheduleParams) -> ValidationReport {
    let mut report = ValidationReport::new();

    let mut family_check = |id: &'static str, label: &str, p: &ScheduleParams| {
        let problems = p.problems();
        let check = report.push(
            id,
            format!("{label} steps positive, nonincreasing, vanishing, non-summable"),
            problems.is_empty(),
            p.alpha,
            0.5,
        );
        if !problems.is_empty() {
            check.note = Some(problems.join("; "));
        }
    };
    family_check("slow-schedule", "slow", slow);
    family_check("fast-schedule", "fast", fast);

    let (Ok(slow_s), Ok(fast_s)) = (StepSchedule::from_params(*slow), StepSchedule::from_params(*fast))
    else {
        for (id, desc) in [
            ("ratio-limit", "beta_k/gamma_k has a finite limit epsilon"),
            ("slow-inverse-increment", "1/beta_{k+1} - 1/beta_k has a limit beta_bar"),
            ("fast-inverse-increment", "1/gamma_{k+1} - 1/gamma_k -> 0 when epsilon = 0"),
        ] {
            report.push(id, desc, false, f64::NAN, 0.0).note =
                Some("schedule parameters invalid".into());
        }
        return report;
    };

    match epsilon_limit(&slow_s, &fast_s) {
        Ok(eps) => {
            let check = report.push(
                "ratio-limit",
                "beta_k/gamma_k has a finite limit epsilon",
                true,
                eps,
                0.0,
            );
            if eps > 0.0 {
                check.note = Some("single-time-scale regime".into());
            }
            let fast_increment = fast_s.inverse_increment_limit();
            report.push(
                "fast-inverse-increment",
                "1/gamma_{k+1} - 1/gamma_k -> 0 when epsilon = 0",
                eps > 0.0 || fast_increment == 0.0,
                fast_increment,
                0.0,
            );
        }
        Err(_) => {
            report
                .push(
                    "ratio-limit",
                    "beta_k/gamma_k has a finite limit epsilon",
                    false,
                    f64::INFINITY,
                    0.0,
                )
                .note = Some(format!(
                "slow exponent {} < fast exponent {}",
                slow.alpha, fast.alpha
            ));
            report.push(
                "fast-inverse-increment",
                "1/gamma_{k+1} - 1/gamma_k -> 0 when epsilon = 0",
                fast_s.inverse_increment_limit() == 0.0,
                fast_s.inverse_increment_limit(),
                0.0,
            );
        }
    }

    report.push(
        "slow-inverse-increment",
        "1/beta_{k+1} - 1/beta_k has a limit beta_bar",
        true,
        slow_s.inverse_increment_limit(),
        0.0,
    );
    report
}
