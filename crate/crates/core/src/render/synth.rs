use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{RenderError, Signal};
use crate::dsp::math::{midi_to_hz, round, sin};
use crate::notation::{MidiNote, Track};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adsr {
    pub attack: f64,
    pub decay: f64,
    /// Sustain level in [0, 1].
    pub sustain: f64,
    pub release: f64,
}

impl Adsr {
    /// Envelope level `t` seconds after note-on for a note held `held` seconds.
    pub fn level(&self, t: f64, held: f64) -> f64 {
        let before_release = |t: f64| {
            if t < self.attack {
                t / self.attack
            } else if t < self.attack + self.decay {
                1.0 - (1.0 - self.sustain) * (t - self.attack) / self.decay
            } else {
                self.sustain
            }
        };
        if t < held {
            before_release(t)
        } else if t < held + self.release {
            before_release(held) * (1.0 - (t - held) / self.release)
        } else {
            0.0
        }
    }
}

/// Additive timbre: partials as (frequency multiple, relative amplitude).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecipe {
    pub id: String,
    pub partials: Vec<(f64, f64)>,
    pub adsr: Adsr,
}

impl SynthRecipe {
    /// Scales partial amplitudes to sum to one, so a note peaks at most at 1.
    pub fn new(id: &str, partials: Vec<(f64, f64)>, adsr: Adsr) -> Self {
        let total: f64 = partials.iter().map(|p| p.1.abs()).sum();
        let partials = partials
            .into_iter()
            .map(|(m, a)| (m, if total > 0.0 { a / total } else { 0.0 }))
            .collect();
        SynthRecipe {
            id: String::from(id),
            partials,
            adsr,
        }
    }

    pub fn sine() -> Self {
        Self::new("sine", vec![(1.0, 1.0)], adsr(0.005, 0.0, 1.0, 0.02))
    }
}

fn adsr(attack: f64, decay: f64, sustain: f64, release: f64) -> Adsr {
    Adsr {
        attack,
        decay,
        sustain,
        release,
    }
}

fn harmonics(n: usize, rolloff: f64) -> Vec<(f64, f64)> {
    (1..=n).map(|k| (k as f64, 1.0 / crate::dsp::math::pow(k as f64, rolloff))).collect()
}

/// Built-in recipe by id; unknown ids fall back to the plain sine.
pub fn builtin_recipe(id: &str) -> SynthRecipe {
    match id {
        "piano" => SynthRecipe::new(
            id,
            vec![(1.0, 1.0), (2.0, 0.5), (3.0, 0.25), (4.0, 0.12), (5.0, 0.06)],
            adsr(0.005, 0.4, 0.3, 0.3),
        ),
        "pluck" => SynthRecipe::new(id, vec![(1.0, 1.0), (2.0, 0.6), (3.0, 0.3), (4.0, 0.15)], adsr(0.003, 0.25, 0.15, 0.2)),
        "bell" => SynthRecipe::new(id, vec![(1.0, 1.0), (2.76, 0.5), (5.4, 0.25), (8.93, 0.12)], adsr(0.002, 0.8, 0.1, 0.8)),
        "mallet" => SynthRecipe::new(id, vec![(1.0, 1.0), (4.0, 0.3), (10.0, 0.1)], adsr(0.002, 0.3, 0.05, 0.2)),
        "organ" => SynthRecipe::new(
            id,
            vec![(1.0, 1.0), (2.0, 0.7), (3.0, 0.4), (4.0, 0.3), (6.0, 0.2), (8.0, 0.15)],
            adsr(0.01, 0.05, 0.9, 0.08),
        ),
        "reed" => SynthRecipe::new(id, vec![(1.0, 1.0), (3.0, 0.5), (5.0, 0.3), (7.0, 0.2)], adsr(0.03, 0.1, 0.8, 0.1)),
        "bass" => SynthRecipe::new(id, vec![(1.0, 1.0), (2.0, 0.4), (3.0, 0.15)], adsr(0.01, 0.2, 0.6, 0.12)),
        "strings" => SynthRecipe::new(id, harmonics(8, 1.0), adsr(0.08, 0.1, 0.85, 0.25)),
        "choir" => SynthRecipe::new(id, vec![(1.0, 1.0), (2.0, 0.3), (3.0, 0.2), (4.0, 0.1)], adsr(0.12, 0.1, 0.85, 0.3)),
        "brass" => SynthRecipe::new(id, harmonics(8, 0.7), adsr(0.04, 0.1, 0.8, 0.15)),
        "flute" => SynthRecipe::new(id, vec![(1.0, 1.0), (2.0, 0.2), (3.0, 0.1)], adsr(0.05, 0.05, 0.9, 0.12)),
        "lead" => SynthRecipe::new(id, vec![(1.0, 1.0), (3.0, 0.33), (5.0, 0.2), (7.0, 0.14)], adsr(0.01, 0.1, 0.8, 0.1)),
        "pad" => SynthRecipe::new(id, harmonics(4, 1.0), adsr(0.3, 0.3, 0.8, 0.6)),
        _ => SynthRecipe::sine(),
    }
}

/// Adds one note into `out`, starting at its onset sample.
pub(crate) fn render_note(out: &mut [f64], note: &MidiNote, pitch: u8, recipe: &SynthRecipe, sample_rate: u32) {
    let sr = sample_rate as f64;
    let f0 = midi_to_hz(pitch as f64);
    let gain = note.velocity as f64 / 127.0;
    let start = round(note.onset * sr) as usize;
    let count = round((note.duration + recipe.adsr.release) * sr) as usize;
    let partials: Vec<(f64, f64)> = recipe
        .partials
        .iter()
        .filter(|(m, _)| f0 * m < sr / 2.0)
        .map(|(m, a)| (2.0 * core::f64::consts::PI * f0 * m / sr, *a))
        .collect();
    for i in 0..count {
        let Some(slot) = out.get_mut(start + i) else { break };
        let env = recipe.adsr.level(i as f64 / sr, note.duration);
        if env == 0.0 {
            continue;
        }
        let n = i as f64;
        let s: f64 = partials.iter().map(|(w, a)| a * sin(w * n)).sum();
        *slot += gain * env * s;
    }
}

/// Renders every note of a track at its own pitch into a mono signal of
/// `length` samples.
pub fn synthesize_track(track: &Track, recipe: &SynthRecipe, sample_rate: u32, length: usize) -> Result<Signal, RenderError> {
    let mut out = vec![0.0; length];
    for n in &track.notes {
        render_note(&mut out, n, n.pitch, recipe, sample_rate);
    }
    Signal::new(sample_rate, vec![out])
}
