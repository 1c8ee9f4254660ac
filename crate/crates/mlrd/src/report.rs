//! Deterministic experiment reports: empirical-vs-target matrix comparisons,
//! KS diagnostics, scalar checks, JSON/CSV emission.
//!
//! Report JSON is a pure function of (config, seed): wall-clock data lives in
//! a sidecar structure so byte-identical reruns stay byte-identical.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matalg::SquareMatrix;
use crate::montecarlo::ExperimentConfig;

/// An empirical matrix against its target, with entrywise standard errors.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MatrixComparison {
    pub name: String,
    pub empirical: SquareMatrix,
    pub target: SquareMatrix,
    /// Entrywise Monte Carlo standard error of the empirical matrix.
    pub standard_error: SquareMatrix,
    pub max_abs_distance: f64,
    pub frobenius_distance: f64,
    /// Configured tolerance on the max-abs distance.
    pub tolerance: f64,
    /// Standard-error multiplier of the adaptive band.
    pub se_multiplier: f64,
    /// Entrywise `|emp - target| <= max(tolerance, se_multiplier * SE)`.
    pub pass: bool,
}

impl MatrixComparison {
    pub fn evaluate(
        name: impl Into<String>,
        empirical: SquareMatrix,
        target: SquareMatrix,
        standard_error: SquareMatrix,
        tolerance: f64,
        se_multiplier: f64,
    ) -> Self {
        let d = empirical.dim();
        let mut pass = true;
        let mut max_abs = 0.0f64;
        let mut frob = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let diff = (empirical.get(i, j) - target.get(i, j)).abs();
                max_abs = max_abs.max(diff);
                frob += diff * diff;
                if diff > tolerance.max(se_multiplier * standard_error.get(i, j)) {
                    pass = false;
                }
            }
        }
        Self {
            name: name.into(),
            empirical,
            target,
            standard_error,
            max_abs_distance: max_abs,
            frobenius_distance: frob.sqrt(),
            tolerance,
            se_multiplier,
            pass,
        }
    }
}

/// Per-coordinate Kolmogorov-Smirnov result.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KsResult {
    pub name: String,
    pub statistic: f64,
    pub p_value: f64,
    pub p_min: f64,
    pub pass: bool,
}

/// A scalar check with both sides recorded.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Admissible bounds; `None` means unbounded on that side.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub pass: bool,
}

impl Check {
    pub fn below(name: impl Into<String>, value: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            value,
            lower: None,
            upper: Some(upper),
            pass: value.is_finite() && value <= upper,
        }
    }

    pub fn in_band(name: impl Into<String>, value: f64, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            value,
            lower: Some(lower),
            upper: Some(upper),
            pass: value.is_finite() && value >= lower && value <= upper,
        }
    }
}

/// Full Monte Carlo experiment report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub experiment: String,
    pub version: String,
    pub spec_digest: String,
    pub config: ExperimentConfig,
    pub comparisons: Vec<MatrixComparison>,
    pub ks: Vec<KsResult>,
    pub checks: Vec<Check>,
    /// Normalizer matrices used by the experiment, keyed by role.
    pub normalizers: BTreeMap<String, SquareMatrix>,
    pub passed: bool,
    /// Wall-clock runtime; excluded from serialization (sidecar data).
    #[serde(skip)]
    pub runtime_seconds: f64,
}

impl ConvergenceReport {
    pub fn recompute_passed(&mut self) {
        self.passed = self.comparisons.iter().all(|c| c.pass)
            && self.ks.iter().all(|k| k.pass)
            && self.checks.iter().all(|c| c.pass);
    }

    /// Deterministic pretty JSON.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    /// sha256 of the canonical JSON bytes.
    pub fn digest(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }

    /// Plot-ready CSV of all matrix comparisons:
    /// `comparison,i,j,empirical,target,standard_error,abs_error`.
    pub fn matrices_csv(&self) -> String {
        let mut out = String::from("comparison,i,j,empirical,target,standard_error,abs_error\n");
        for c in &self.comparisons {
            let d = c.empirical.dim();
            for i in 0..d {
                for j in 0..d {
                    let e = c.empirical.get(i, j);
                    let t = c.target.get(i, j);
                    out.push_str(&format!(
                        "{},{},{},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                        c.name,
                        i,
                        j,
                        e,
                        t,
                        c.standard_error.get(i, j),
                        (e - t).abs()
                    ));
                }
            }
        }
        out
    }

    /// One-line-per-item human summary.
    pub fn summary_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        for c in &self.comparisons {
            lines.push(format!(
                "[{}] {}: max-abs {c_dist:.4} (tol {tol}, 4se rule) ",
                if c.pass { "pass" } else { "FAIL" },
                c.name,
                c_dist = c.max_abs_distance,
                tol = c.tolerance
            ));
        }
        for k in &self.ks {
            lines.push(format!(
                "[{}] {}: KS D = {:.4}, p = {:.4} (min {})",
                if k.pass { "pass" } else { "FAIL" },
                k.name,
                k.statistic,
                k.p_value,
                k.p_min
            ));
        }
        for c in &self.checks {
            let lo = c.lower.map_or("-inf".to_string(), |v| format!("{v:.4}"));
            let hi = c.upper.map_or("inf".to_string(), |v| format!("{v:.4}"));
            lines.push(format!(
                "[{}] {}: value {:.6} in [{lo}, {hi}]",
                if c.pass { "pass" } else { "FAIL" },
                c.name,
                c.value
            ));
        }
        lines.push(format!(
            "[{}] {} overall",
            if self.passed { "pass" } else { "FAIL" },
            self.experiment
        ));
        lines
    }
}

/// Wall-clock sidecar, written next to the report but never part of it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportSidecar {
    pub runtime_seconds: f64,
    pub threads: usize,
    pub report_digest: String,
}
