use std::io;

use thiserror::Error;

use crate::lp::InfeasibilityReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed record at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("slate has {len} ads but only {slots} slots are available")]
    SlateTooLong { len: usize, slots: usize },

    #[error("enumeration would visit {count} slates (limit {limit}); use {hint} instead")]
    EnumerationGuard {
        count: u128,
        limit: u128,
        hint: &'static str,
    },

    #[error(
        "constraint levels are unreachable: clicks {:.4} (attainable {:.4}), conversions {:.4} (attainable {:.4})",
        .0.target_clicks, .0.attainable.goal_clicks, .0.target_conversions, .0.attainable.goal_conversions
    )]
    Infeasible(InfeasibilityReport),

    #[error("report fingerprints differ: {0} vs {1}")]
    FingerprintMismatch(String, String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
