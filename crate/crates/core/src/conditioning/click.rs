use alloc::vec;

use crate::audio::{AudioError, Waveform};
use crate::dsp::math::{exp, round, sin};
use crate::melody::RhythmSpots;

/// Timbre of one click: a decaying sine burst.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickParams {
    pub frequency: f64,
    /// Burst length in seconds.
    pub length: f64,
    /// Exponential decay time constant in seconds.
    pub decay: f64,
    pub amplitude: f64,
}

impl Default for ClickParams {
    fn default() -> Self {
        ClickParams {
            frequency: 1000.0,
            length: 0.03,
            decay: 0.006,
            amplitude: 0.8,
        }
    }
}

pub fn synthesize_click_track(spots: &RhythmSpots, sample_rate: u32) -> Result<Waveform, AudioError> {
    synthesize_click_track_with(spots, sample_rate, &ClickParams::default())
}

/// Mono click track as long as the clip. Bursts start at the sample
/// nearest each onset; overlaps sum and then clamp.
pub fn synthesize_click_track_with(
    spots: &RhythmSpots,
    sample_rate: u32,
    params: &ClickParams,
) -> Result<Waveform, AudioError> {
    let sr = sample_rate as f64;
    let len = round(spots.clip_duration.max(0.0) * sr) as usize;
    let burst_len = round(params.length * sr) as usize;
    let burst: vec::Vec<f64> = (0..burst_len)
        .map(|n| {
            let t = n as f64;
            params.amplitude
                * exp(-t / (params.decay * sr))
                * sin(2.0 * core::f64::consts::PI * params.frequency * (t + 0.5) / sr)
        })
        .collect();
    let mut acc = vec![0.0f64; len];
    for &t in &spots.onsets {
        let start = round(t * sr) as usize;
        for (n, b) in burst.iter().enumerate() {
            match acc.get_mut(start + n) {
                Some(s) => *s += b,
                None => break,
            }
        }
    }
    let samples = acc.iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect();
    Waveform::mono(sample_rate, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_spots_give_silence() {
        let w = synthesize_click_track(&RhythmSpots::new(vec![], 2.0).unwrap(), 48_000).unwrap();
        assert_eq!(w.len(), 96_000);
        assert!(w.channels[0].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn burst_occupies_exactly_thirty_ms() {
        let w = synthesize_click_track(&RhythmSpots::new(vec![1.0], 2.0).unwrap(), 48_000).unwrap();
        let nz: vec::Vec<usize> = w.channels[0]
            .iter()
            .enumerate()
            .filter(|(_, s)| **s != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(nz.first(), Some(&48_000));
        assert_eq!(nz.last(), Some(&(48_000 + 1439)));
        assert_eq!(nz.len(), 1440);
    }
}
