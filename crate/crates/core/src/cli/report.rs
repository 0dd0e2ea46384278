//! Run reports: a deterministic JSON report plus a separate metadata file
//! for wall-clock times.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

use crate::adjoint::{IdentityReport, Verdict};
use crate::cli::config::{CheckName, ExperimentConfig};
use crate::error::Result;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub check: CheckName,
    /// Factor applied to the default tolerances; 1 unless overridden.
    pub tolerance_factor: f64,
    pub overridden: bool,
    pub verdict: Verdict,
    pub reports: Vec<IdentityReport>,
}

impl CheckOutcome {
    pub fn new(check: CheckName, cfg: &ExperimentConfig, reports: Vec<IdentityReport>) -> Self {
        let verdict = if reports.iter().all(IdentityReport::passed) { Verdict::Pass } else { Verdict::Fail };
        let factor = cfg.tolerance_factor(check);
        Self {
            check,
            tolerance_factor: factor,
            overridden: cfg.tolerance_overrides.get(&check).is_some_and(|o| o.confirmed),
            verdict,
            reports,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub config: ExperimentConfig,
    pub checks: Vec<CheckOutcome>,
    pub verdict: Verdict,
}

impl RunReport {
    pub fn new(config: ExperimentConfig, checks: Vec<CheckOutcome>) -> Self {
        let verdict = if checks.iter().all(|c| c.verdict == Verdict::Pass) { Verdict::Pass } else { Verdict::Fail };
        Self { version: REPORT_VERSION, config, checks, verdict }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn find(&self, check: CheckName) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.check == check)
    }

    /// CSV with one row per identity report.
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "check,name,estimate,target,standard_error,tolerance,verdict")?;
        for c in &self.checks {
            for r in &c.reports {
                let verdict = if r.passed() { "pass" } else { "fail" };
                writeln!(
                    w,
                    "{},\"{}\",{},{},{},{},{verdict}",
                    c.check.as_str(),
                    r.name.replace('"', "\"\""),
                    r.estimate,
                    r.target,
                    r.standard_error,
                    r.tolerance
                )?;
            }
        }
        Ok(())
    }
}

/// Run facts that vary between identical reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub threads: usize,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: BTreeMap<String, f64>,
    pub total_seconds: f64,
}
