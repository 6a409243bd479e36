use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{cosine, MetricError};
use crate::audio::Waveform;
use crate::dsp::math::{gain_to_db, round, sqrt};

pub const DB_FLOOR: f64 = -90.0;

/// Loudness in dB per fixed-length frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbEnvelope {
    /// Frame length in seconds.
    pub frame: f64,
    pub values: Vec<f64>,
}

pub fn db_envelope(audio: &Waveform) -> DbEnvelope {
    db_envelope_with(audio, 0.1)
}

/// RMS over all channels of each frame, in dB, floored. The last frame
/// may be shorter than `frame` seconds.
pub fn db_envelope_with(audio: &Waveform, frame: f64) -> DbEnvelope {
    let len = (round(frame * audio.sample_rate as f64) as usize).max(1);
    let mut values = Vec::with_capacity(audio.len().div_ceil(len));
    let mut start = 0;
    while start < audio.len() {
        let end = (start + len).min(audio.len());
        let mut sum = 0.0;
        for c in &audio.channels {
            sum += c[start..end].iter().map(|s| (*s as f64) * (*s as f64)).sum::<f64>();
        }
        let rms = sqrt(sum / ((end - start) * audio.channel_count()) as f64);
        values.push(gain_to_db(rms, DB_FLOOR));
        start = end;
    }
    DbEnvelope { frame, values }
}

fn differences(v: &[f64]) -> Vec<f64> {
    v.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Cosine distance between the frame-to-frame dB changes of two envelopes,
/// in [0, 2]. Flat-versus-flat is 0.
pub fn dynamic_variation_distance(a: &DbEnvelope, b: &DbEnvelope) -> Result<f64, MetricError> {
    if a.values.is_empty() || b.values.is_empty() {
        return Err(MetricError::EmptyEnvelope);
    }
    let (da, db) = (differences(&a.values), differences(&b.values));
    let n = da.len().min(db.len());
    Ok((1.0 - cosine(&da[..n], &db[..n])).clamp(0.0, 2.0))
}
