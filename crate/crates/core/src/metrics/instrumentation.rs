use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{cosine, MetricError};
use crate::notation::MidiSong;

/// General-MIDI instrument families, one per block of eight programs.
pub const GM_FAMILIES: [&str; 16] = [
    "piano",
    "chromatic percussion",
    "organ",
    "guitar",
    "bass",
    "strings",
    "ensemble",
    "brass",
    "reed",
    "pipe",
    "synth lead",
    "synth pad",
    "synth effects",
    "ethnic",
    "percussive",
    "sound effects",
];

pub fn gm_family_name(program: u8) -> &'static str {
    GM_FAMILIES[(program as usize / 8).min(15)]
}

/// Share of total note time per instrument family.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InstrumentDistribution {
    pub weights: BTreeMap<String, f64>,
}

impl InstrumentDistribution {
    /// Normalizes `(family, note seconds)` pairs; repeated families add up.
    pub fn from_durations<'a>(items: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Self, MetricError> {
        let mut weights: BTreeMap<String, f64> = BTreeMap::new();
        for (family, secs) in items {
            if secs > 0.0 {
                *weights.entry(family.to_string()).or_insert(0.0) += secs;
            }
        }
        let total: f64 = weights.values().sum();
        if total <= 0.0 {
            return Err(MetricError::ZeroDistribution);
        }
        weights.values_mut().for_each(|w| *w /= total);
        Ok(InstrumentDistribution { weights })
    }

    /// Distribution of a song by each track's family. `family_of` receives
    /// the track index; `None` falls back to the GM family of its program
    /// (or "drums" on the percussion channel).
    pub fn from_song(song: &MidiSong, family_of: impl Fn(usize) -> Option<String>) -> Result<Self, MetricError> {
        let items: Vec<(String, f64)> = song
            .tracks
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let family = family_of(i).unwrap_or_else(|| {
                    if t.is_percussion() {
                        "drums".to_string()
                    } else {
                        gm_family_name(t.program).to_string()
                    }
                });
                (family, t.notes.iter().map(|n| n.duration).sum())
            })
            .collect();
        Self::from_durations(items.iter().map(|(f, d)| (f.as_str(), *d)))
    }
}

/// Cosine distance over the union of families, missing families count as 0.
pub fn instrumentation_distance(a: &InstrumentDistribution, b: &InstrumentDistribution) -> Result<f64, MetricError> {
    let keys: Vec<&String> = a.weights.keys().chain(b.weights.keys()).collect::<alloc::collections::BTreeSet<_>>().into_iter().collect();
    let va: Vec<f64> = keys.iter().map(|k| a.weights.get(*k).copied().unwrap_or(0.0)).collect();
    let vb: Vec<f64> = keys.iter().map(|k| b.weights.get(*k).copied().unwrap_or(0.0)).collect();
    if va.iter().all(|v| *v == 0.0) || vb.iter().all(|v| *v == 0.0) {
        return Err(MetricError::ZeroDistribution);
    }
    Ok((1.0 - cosine(&va, &vb)).clamp(0.0, 1.0))
}
