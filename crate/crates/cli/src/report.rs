use serde::Serialize;

use crate::config::ExperimentConfig;

/// Bumped whenever a field of the JSON report changes meaning or disappears.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    /// The mathematical statement the check exercises.
    pub anchor: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    /// Passes iff `measured <= tolerance`; NaN fails.
    pub fn at_most(name: impl Into<String>, anchor: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self { name: name.into(), anchor: anchor.into(), measured, tolerance, pass: measured <= tolerance }
    }
}

/// A line plot.
#[derive(Clone, Debug, Serialize)]
pub struct Series {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Environment {
    pub version: String,
    pub threads: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub command: String,
    pub config: ExperimentConfig,
    pub environment: Environment,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub data: serde_json::Value,
    pub series: Vec<Series>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

/// Node table written as CSV.
#[derive(Clone, Debug, Default)]
pub struct NodeTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}
