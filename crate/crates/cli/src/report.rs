use crate::config::ExperimentConfig;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One verified property.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    /// Largest observed violation measure, when the check has one.
    pub worst_error: Option<f64>,
    pub tolerance: Option<f64>,
    pub detail: String,
}

impl Check {
    pub fn flag(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.to_string(), pass, worst_error: None, tolerance: None, detail: detail.into() }
    }

    /// Passes when `worst <= tolerance`; NaN fails.
    pub fn within(name: &str, worst: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            pass: worst <= tolerance,
            worst_error: Some(worst),
            tolerance: Some(tolerance),
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub subcommand: String,
    pub config: BTreeMap<String, String>,
    pub full: bool,
    pub checks: Vec<Check>,
    pub records: serde_json::Value,
}

impl ExperimentReport {
    pub fn new(cfg: &ExperimentConfig, checks: Vec<Check>, records: serde_json::Value) -> Self {
        Self {
            subcommand: cfg.subcommand().name().to_string(),
            config: cfg.values().clone(),
            full: cfg.full(),
            checks,
            records,
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}
