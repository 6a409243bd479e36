use alloc::string::String;
use serde::{Deserialize, Serialize};

/// Column order of the batch report. The last three are filled only when
/// an external embedding tool supplied them.
pub const REPORT_COLUMNS: [&str; 10] = [
    "name",
    "diversity",
    "rhythm_raw",
    "rhythm_norm",
    "rhythm_lag",
    "dynamic_dist",
    "instr_dist",
    "kl",
    "fad",
    "imagebind",
];

/// One row of an evaluation report. Absent values serialize as null.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsRow {
    pub name: String,
    pub diversity: Option<f64>,
    pub rhythm_raw: Option<f64>,
    pub rhythm_norm: Option<f64>,
    pub rhythm_lag: Option<f64>,
    pub dynamic_dist: Option<f64>,
    pub instr_dist: Option<f64>,
    pub kl: Option<f64>,
    pub fad: Option<f64>,
    pub imagebind: Option<f64>,
}
