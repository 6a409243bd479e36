//! Audio to MIDI for monophonic material.
//!
//! The neural multi-instrument transcriber a production setup would use is
//! an external backend; this classical one is enough for sine-like leads
//! such as the stub generator's output.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

use crate::audio::Waveform;
use crate::dsp::fft::Stft;
use crate::dsp::math::{gain_to_db, log2, round, sqrt};
use crate::dsp::onset::{onset_frames, OnsetParams};
use crate::notation::{MidiNote, MidiSong, Track};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TranscribeError {
    #[error("audio is empty")]
    Empty,
    #[error("transcription backend failed: {0}")]
    Backend(String),
}

pub trait Transcriber: Send + Sync {
    fn transcribe(&self, audio: &Waveform) -> Result<MidiSong, TranscribeError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonophonicTranscriber {
    pub onset: OnsetParams,
    pub pitch_window: usize,
    /// A note ends when its 10 ms RMS falls this many dB below its peak.
    pub release_db: f64,
    /// Frames quieter than this (dBFS) never start or sustain a note.
    pub silence_db: f64,
    pub min_duration: f64,
    pub program: u8,
}

impl Default for MonophonicTranscriber {
    fn default() -> Self {
        MonophonicTranscriber {
            onset: OnsetParams::default(),
            pitch_window: 4096,
            release_db: 30.0,
            silence_db: -60.0,
            min_duration: 0.03,
            program: 0,
        }
    }
}

/// Strongest spectral peak in Hz, refined by parabolic interpolation and
/// pulled down an octave when the sub-octave is nearly as strong.
fn dominant_frequency(stft: &mut Stft, frame: &[f64], sample_rate: f64) -> Option<f64> {
    let mut mags = Vec::new();
    stft.magnitudes(frame, &mut mags);
    let n = stft.size() as f64;
    let lo = (27.5 * n / sample_rate) as usize + 1;
    let mut best = lo;
    for k in lo..mags.len() - 1 {
        if mags[k] > mags[best] {
            best = k;
        }
    }
    if mags[best] <= 0.0 {
        return None;
    }
    let refine = |k: usize| {
        let (a, b, c) = (mags[k - 1], mags[k], mags[k + 1]);
        let d = a - 2.0 * b + c;
        let off = if d != 0.0 { 0.5 * (a - c) / d } else { 0.0 };
        (k as f64 + off.clamp(-0.5, 0.5)) * sample_rate / n
    };
    let f = refine(best);
    let half = round(best as f64 / 2.0) as usize;
    if half > lo && mags[half] > 0.5 * mags[best] {
        return Some(refine(half));
    }
    Some(f)
}

impl Transcriber for MonophonicTranscriber {
    fn transcribe(&self, audio: &Waveform) -> Result<MidiSong, TranscribeError> {
        if audio.is_empty() {
            return Err(TranscribeError::Empty);
        }
        let sr = audio.sample_rate as f64;
        let signal = audio.to_mono();
        let hop = round(sr / self.onset.grid_rate).max(1.0) as usize;
        let rms_db: Vec<f64> = signal
            .chunks(hop)
            .map(|c| gain_to_db(sqrt(c.iter().map(|x| x * x).sum::<f64>() / c.len() as f64), -120.0))
            .collect();
        let onsets = onset_frames(&signal, audio.sample_rate, &self.onset);
        let mut stft = Stft::hann(self.pitch_window);
        let mut notes = Vec::new();
        for (i, &k) in onsets.iter().enumerate() {
            let next = onsets.get(i + 1).copied().unwrap_or(rms_db.len());
            if k >= rms_db.len() {
                continue;
            }
            // peak loudness shortly after the attack
            let span = &rms_db[k..next.min(rms_db.len())];
            let (peak_at, peak) = span
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::MIN), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc });
            if peak < self.silence_db {
                continue;
            }
            let mut end = span.len();
            for (j, v) in span.iter().enumerate().skip(peak_at) {
                if *v < peak - self.release_db || *v < self.silence_db {
                    end = j;
                    break;
                }
            }
            let onset = k as f64 / self.onset.grid_rate;
            let duration = (end as f64) / self.onset.grid_rate;
            if duration < self.min_duration {
                continue;
            }
            let start = ((k + peak_at) * hop).min(signal.len());
            let stop = (start + self.pitch_window).min((k + end) * hop).min(signal.len());
            let Some(hz) = dominant_frequency(&mut stft, &signal[start..stop], sr) else { continue };
            let pitch = round(69.0 + 12.0 * log2(hz / 440.0));
            if !(0.0..=127.0).contains(&pitch) {
                continue;
            }
            let amp = crate::dsp::math::db_to_gain(peak) * core::f64::consts::SQRT_2;
            let velocity = round(amp.min(1.0) * 127.0).clamp(1.0, 127.0) as u8;
            notes.push(MidiNote::new(onset, duration, pitch as u8, velocity));
        }
        let mut song = MidiSong::new(vec![Track::new(0, self.program, 0, notes)]);
        song.tracks[0].name = String::from("transcription");
        song.refresh_duration();
        Ok(song)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::math::{midi_to_hz, sin};

    #[test]
    fn recovers_three_sine_notes() {
        let sr = 32_000.0;
        let mut s = vec![0.0f32; 64_000];
        for (onset, pitch) in [(0.25, 60.0), (0.75, 64.0), (1.25, 71.0)] {
            let hz = midi_to_hz(pitch);
            let start = (onset * sr) as usize;
            for i in 0..(0.3 * sr) as usize {
                let env = (i as f64 / 160.0).min(1.0);
                s[start + i] += (0.5 * env * sin(2.0 * core::f64::consts::PI * hz * i as f64 / sr)) as f32;
            }
        }
        let song = MonophonicTranscriber::default().transcribe(&Waveform::mono(32_000, s).unwrap()).unwrap();
        let got: Vec<(u8, f64)> = song.tracks[0].notes.iter().map(|n| (n.pitch, n.onset)).collect();
        assert_eq!(got.len(), 3, "{got:?}");
        for ((p, o), (eo, ep)) in got.iter().zip([(0.25, 60), (0.75, 64), (1.25, 71)]) {
            assert_eq!(*p, ep);
            assert!((o - eo).abs() <= 0.02);
        }
    }
}
