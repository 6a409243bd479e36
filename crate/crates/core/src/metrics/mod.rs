//! Desk-computable evaluation: chroma diversity, rhythm cross-correlation,
//! dynamic variation and instrumentation distances.

mod diversity;
mod dynamics;
mod instrumentation;
mod report;
mod rhythm;

use thiserror::Error;

pub use diversity::{chroma_diversity, chroma_diversity_with, segment_means, DEFAULT_SEGMENT_SECONDS};
pub use dynamics::{db_envelope, db_envelope_with, dynamic_variation_distance, DbEnvelope, DB_FLOOR};
pub use instrumentation::{gm_family_name, instrumentation_distance, InstrumentDistribution, GM_FAMILIES};
pub use report::{MetricsRow, REPORT_COLUMNS};
pub use rhythm::{detect_onsets, detect_onsets_with, rhythm_xcorr, ImpulseTrain, XcorrResult, DEFAULT_GRID_RATE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("need at least two items, got {0}")]
    TooFew(usize),
    #[error("chroma diversity needs continuous chromagrams, item {0} is one-hot")]
    OneHot(usize),
    #[error("chromagram {0} has no frames")]
    EmptyChroma(usize),
    #[error("impulse trains use different grid rates ({0} Hz vs {1} Hz)")]
    GridMismatch(f64, f64),
    #[error("maximum lag must be non-negative and finite")]
    BadLag,
    #[error("envelope is empty")]
    EmptyEnvelope,
    #[error("instrument distribution is all zero")]
    ZeroDistribution,
    #[error("invalid parameter: {0}")]
    BadParameter(&'static str),
}

/// Cosine similarity of two non-negative-or-signed vectors. Two zero vectors
/// are identical (1); a zero vector against a non-zero one shares nothing (0).
pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    match (na > 0.0, nb > 0.0) {
        (false, false) => 1.0,
        (true, true) => (dot / crate::dsp::math::sqrt(na * nb)).clamp(-1.0, 1.0),
        _ => 0.0,
    }
}
