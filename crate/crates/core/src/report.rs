use serde::{Deserialize, Serialize};

/// One named pass/fail item in a JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub statistic: f64,
    pub tolerance: f64,
}

impl Check {
    /// Passes when `statistic <= tolerance`.
    pub fn at_most(name: impl Into<String>, statistic: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            pass: statistic <= tolerance,
            statistic,
            tolerance,
        }
    }

    pub fn flag(name: impl Into<String>, pass: bool, statistic: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            pass,
            statistic,
            tolerance,
        }
    }
}

/// `{law, checks: [...]}` as emitted by `coupling-check` and `mw-check`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub law: String,
    pub checks: Vec<Check>,
}

impl CheckReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}
