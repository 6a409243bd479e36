use alloc::vec;
use alloc::vec::Vec;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::bundle::{ConditioningBundle, GeneratorBackend, GeneratorCaps, GeneratorError};
use super::chroma::Chromagram;
use crate::audio::Waveform;
use crate::dsp::math::{cos, pow, round, sin};

/// A note planned by [`StubGenerator`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StubNote {
    pub onset: f64,
    pub duration: f64,
    /// MIDI pitch, always in octave 4 (60..=71).
    pub pitch: u8,
    pub amplitude: f64,
}

/// Deterministic stand-in for a neural melody decoder.
///
/// Every run of consecutive valid, non-silent rhythm frames becomes one
/// sine note whose pitch class is the run's dominant chroma bin.
#[derive(Debug, Clone, PartialEq)]
pub struct StubGenerator {
    pub sample_rate: u32,
    pub max_duration: f64,
    pub max_note: f64,
    pub attack: f64,
    pub release: f64,
    pub amplitude: f64,
    /// Length of the click bursts the rhythm condition was built from.
    /// Only used to place notes whose frame run starts at frame 0.
    pub click_length: f64,
}

impl Default for StubGenerator {
    fn default() -> Self {
        StubGenerator {
            sample_rate: 32_000,
            max_duration: 600.0,
            max_note: 0.4,
            attack: 0.005,
            release: 0.08,
            amplitude: 0.5,
            click_length: 0.03,
        }
    }
}

/// Start time of the event that lit frames `first..=last`.
///
/// Frame `k` covers samples `[k*hop, k*hop + window)`. An event first
/// lights frame `k0 > 0` only if it starts within the last hop of that
/// frame, so the middle of that hop is the best guess. A run that begins
/// at frame 0 carries no such information; its end does instead.
fn run_onset(chroma: &Chromagram, first: usize, last: usize, click_length: f64) -> f64 {
    let sr = chroma.sample_rate as f64;
    let hop = chroma.hop as f64;
    if first > 0 {
        (first as f64 * hop + chroma.window as f64 - hop / 2.0) / sr
    } else {
        (((last as f64 + 0.5) * hop) / sr - click_length).max(0.0)
    }
}

impl StubGenerator {
    /// The notes `generate` will render.
    pub fn plan(&self, bundle: &ConditioningBundle, duration: f64, seed: u64) -> Vec<StubNote> {
        let chroma = bundle.rhythm();
        let active: Vec<bool> = chroma
            .frames
            .iter()
            .zip(&chroma.mask)
            .map(|(f, &m)| m && f.iter().any(|v| *v > 0.0))
            .collect();
        let mut runs = Vec::new();
        let mut k = 0;
        while k < active.len() {
            if !active[k] {
                k += 1;
                continue;
            }
            let first = k;
            while k + 1 < active.len() && active[k + 1] {
                k += 1;
            }
            runs.push((first, k));
            k += 1;
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut notes: Vec<StubNote> = Vec::with_capacity(runs.len());
        for &(first, last) in &runs {
            let mut sum = [0.0; 12];
            for f in &chroma.frames[first..=last] {
                for (s, v) in sum.iter_mut().zip(f) {
                    *s += v;
                }
            }
            let jitter = (rng.next_u32() as f64 / u32::MAX as f64) * 0.2 - 0.1;
            let onset = run_onset(chroma, first, last, self.click_length);
            if onset >= duration {
                continue;
            }
            notes.push(StubNote {
                onset,
                duration: self.max_note,
                pitch: 60 + Chromagram::argmax(&sum) as u8,
                amplitude: self.amplitude * (1.0 + jitter),
            });
        }
        for i in 0..notes.len() {
            let next = notes.get(i + 1).map_or(duration, |n| n.onset);
            let room = if i + 1 < notes.len() { 0.8 * (next - notes[i].onset) } else { next - notes[i].onset };
            notes[i].duration = self.max_note.min(room).max(0.0);
        }
        notes
    }

    fn render(&self, notes: &[StubNote], duration: f64) -> Result<Waveform, GeneratorError> {
        let sr = self.sample_rate as f64;
        let len = round(duration * sr) as usize;
        let mut acc = vec![0.0f64; len];
        for n in notes {
            let hz = 440.0 * pow(2.0, (n.pitch as f64 - 69.0) / 12.0);
            let start = round(n.onset * sr) as usize;
            let count = round(n.duration * sr) as usize;
            let attack = (self.attack * sr).max(1.0);
            let release = (self.release * sr).max(1.0);
            for i in 0..count {
                let Some(slot) = acc.get_mut(start + i) else { break };
                let t = i as f64;
                let tail = ((count - i) as f64 / release).min(1.0);
                // raised-cosine release keeps note ends from reading as onsets
                let env = (t / attack).min(1.0) * (0.5 - 0.5 * cos(core::f64::consts::PI * tail));
                *slot += n.amplitude * env * sin(2.0 * core::f64::consts::PI * hz * t / sr);
            }
        }
        let samples = acc.iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect();
        Ok(Waveform::mono(self.sample_rate, samples)?)
    }
}

impl GeneratorBackend for StubGenerator {
    fn capabilities(&self) -> GeneratorCaps {
        GeneratorCaps {
            max_duration: self.max_duration,
            sample_rate: self.sample_rate,
            concurrent: true,
        }
    }

    fn generate(&self, bundle: &ConditioningBundle, duration: f64, seed: u64) -> Result<Waveform, GeneratorError> {
        self.check_duration(duration)?;
        let notes = self.plan(bundle, duration, seed);
        self.render(&notes, duration)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::{assemble_condition, chromagram, synthesize_click_track};
    use crate::melody::RhythmSpots;

    fn bundle(spots: Vec<f64>, clip: f64) -> ConditioningBundle {
        let click = synthesize_click_track(&RhythmSpots::new(spots, clip).unwrap(), 32_000).unwrap();
        assemble_condition(chromagram(&click, 4096, 2048, true).unwrap(), "test").unwrap()
    }

    #[test]
    fn one_note_per_spot() {
        let b = bundle(vec![0.5, 1.5, 2.5], 3.0);
        let notes = StubGenerator::default().plan(&b, 3.0, 7);
        assert_eq!(notes.len(), 3);
        let hop = 2048.0 / 32_000.0;
        for (n, s) in notes.iter().zip([0.5, 1.5, 2.5]) {
            assert!((n.onset - s).abs() <= hop, "{} vs {}", n.onset, s);
            // 1 kHz clicks fold onto pitch class B
            assert_eq!(n.pitch, 71);
        }
    }

    #[test]
    fn deterministic_and_truncated() {
        let b = bundle(vec![0.5, 1.5, 2.5], 3.0);
        let g = StubGenerator::default();
        assert_eq!(g.generate(&b, 3.0, 1).unwrap(), g.generate(&b, 3.0, 1).unwrap());
        assert_eq!(g.plan(&b, 2.0, 1).len(), 2);
        assert_eq!(g.generate(&b, 2.0, 1).unwrap().len(), 64_000);
        assert!(g.generate(&b, 0.0, 1).is_err());
    }
}
