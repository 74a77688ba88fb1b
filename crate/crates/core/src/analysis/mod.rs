//! Ratio curves, finite-horizon lim-inf proxies, class-membership verdicts and
//! cross-checks between the limit theorems.
//!
//! Every verdict is numerical evidence at a finite horizon, never a proof.

mod classes;
mod consistency;
mod curve;

use std::fmt;

use serde::{Serialize, Serializer};

use crate::convolve::ConvConfig;

pub use classes::{check_condition2, is_long_tailed, test_class, ClassTag, ClassVerdict};
pub use consistency::{builtin_families, theorem_consistency, ConsistencyReport, ImplicationCheck, Outcome};
pub use curve::{
    liminf_estimate, ratio_curve, ratio_curve_pair, ratio_curve_stopped, CurveMode, LiminfEstimate, RatioCurve,
};

#[derive(Debug, Clone, Copy)]
pub struct AnalysisConfig {
    pub horizon: f64,
    pub n_points: usize,
    /// Relative tolerance of class verdicts; violations need twice this margin.
    pub tol: f64,
    /// Lim-inf windows are `[window · H, H]`.
    pub window: f64,
    pub conv: ConvConfig,
    /// Grid cells used to tabulate a stopped sum over `[0, H]`.
    pub stopped_cells: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            horizon: 1e3,
            n_points: 256,
            tol: 0.05,
            window: 0.5,
            // a fifth of the verdict tolerance keeps brackets from deciding verdicts
            conv: ConvConfig {
                rel_tol: 0.01,
                ..ConvConfig::default()
            },
            stopped_cells: 1024,
        }
    }
}

/// Tri-state outcome of a finite-horizon test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Satisfied,
    Violated,
    Inconclusive,
}

impl Status {
    /// Violated wins over inconclusive, which wins over satisfied.
    pub fn all(items: impl IntoIterator<Item = Status>) -> Status {
        let mut out = Status::Satisfied;
        for s in items {
            match s {
                Status::Violated => return Status::Violated,
                Status::Inconclusive => out = Status::Inconclusive,
                Status::Satisfied => {}
            }
        }
        out
    }

    /// `observed ≈ target` within `tol`, with a hysteresis band up to `2·tol`.
    pub fn two_sided(observed: f64, target: f64, tol: f64) -> Status {
        if target.is_infinite() || observed.is_infinite() {
            return if target == observed { Status::Satisfied } else { Status::Violated };
        }
        let rel = (observed / target - 1.0).abs();
        if rel <= tol {
            Status::Satisfied
        } else if rel > 2.0 * tol {
            Status::Violated
        } else {
            Status::Inconclusive
        }
    }

    /// `observed ≥ target` up to `tol`, violated only below `target·(1 − 2 tol)`.
    pub fn at_least(log_observed: f64, log_target: f64, tol: f64) -> Status {
        let d = log_observed - log_target;
        if d >= (1.0 - tol).ln() {
            Status::Satisfied
        } else if d < (1.0 - 2.0 * tol).ln() {
            Status::Violated
        } else {
            Status::Inconclusive
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Satisfied => "satisfied",
            Status::Violated => "violated",
            Status::Inconclusive => "inconclusive",
        })
    }
}

/// A real for reports: finite values as JSON numbers, the rest as `"inf"`, `"-inf"` or `"nan"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Real(pub f64);

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v = self.0;
        if v.is_finite() {
            s.serialize_f64(v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_real(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}
