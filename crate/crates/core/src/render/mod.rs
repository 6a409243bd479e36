//! Headless executor for arrangement schemes: additive synthesis, per-track
//! dynamics, pan and reverb, and a fixed-order mixdown to 48 kHz stereo.

mod mix;
mod synth;

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{encode_wav, AudioError, Waveform};
use crate::diag::has_errors;
use crate::dsp::math::round;
use crate::notation::{MidiNote, MidiSong, Track};
use crate::scheme::{validate_scheme, ArrangementScheme, DynamicsOffsets, InstrumentRegistry};

pub use mix::{apply_dynamics, apply_pan, apply_reverb, envelope_db, mixdown, schroeder};
pub use synth::{builtin_recipe, synthesize_track, Adsr, SynthRecipe};

pub const MASTER_SAMPLE_RATE: u32 = 48_000;
pub const MASTER_BITS: u16 = 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("expected a mono signal, got {0} channels")]
    NotMono(usize),
    #[error("track {0} does not match the mix length, rate or channel count")]
    Mismatch(usize),
    #[error("scheme does not fit the song: {0}")]
    InvalidScheme(alloc::string::String),
    #[error("signal has no channels or ragged channels")]
    BadSignal,
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// Unclamped processing buffer; only the master is limited to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f64>>,
}

impl Signal {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self, RenderError> {
        if channels.is_empty() || channels.iter().any(|c| c.len() != channels[0].len()) {
            return Err(RenderError::BadSignal);
        }
        Ok(Signal { sample_rate, channels })
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_waveform(w: &Waveform) -> Self {
        Signal {
            sample_rate: w.sample_rate,
            channels: w.channels.iter().map(|c| c.iter().map(|s| *s as f64).collect()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub sample_rate: u32,
    /// Barline crossfade for dynamic changes, seconds.
    pub crossfade: f64,
    /// Silence kept after the last note for releases and reverb.
    pub tail: f64,
    pub offsets: DynamicsOffsets,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            sample_rate: MASTER_SAMPLE_RATE,
            crossfade: 0.01,
            tail: 2.0,
            offsets: DynamicsOffsets::default(),
        }
    }
}

/// One rendered note, for auditing octave folding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteLogEntry {
    pub track: usize,
    pub onset: f64,
    pub source_pitch: u8,
    pub pitch: u8,
    pub folded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub master: Waveform,
    pub notes: Vec<NoteLogEntry>,
}

impl RenderOutput {
    pub fn to_wav(&self) -> Result<Vec<u8>, AudioError> {
        encode_wav(&self.master, MASTER_BITS)
    }
}

/// Samples in the rendered master.
pub fn render_length(song: &MidiSong, cfg: &RenderConfig) -> usize {
    round((song.duration + cfg.tail) * cfg.sample_rate as f64) as usize
}

/// Everything needed to render one planned track on its own, so callers
/// can spread tracks across threads and still mix in index order.
pub struct TrackJob<'a> {
    pub index: usize,
    song: &'a MidiSong,
    scheme: &'a ArrangementScheme,
    registry: &'a InstrumentRegistry,
    cfg: &'a RenderConfig,
}

impl TrackJob<'_> {
    /// Processed stereo signal plus the note log for this track.
    pub fn run(&self) -> Result<(Signal, Vec<NoteLogEntry>), RenderError> {
        let plan = &self.scheme.tracks[self.index];
        let entry = self
            .registry
            .get(&plan.instrument)
            .ok_or_else(|| RenderError::InvalidScheme(alloc::format!("unknown instrument {}", plan.instrument)))?;
        let source = &self.song.tracks[plan.source_track];
        let mut log = Vec::with_capacity(source.notes.len());
        let notes: Vec<MidiNote> = source
            .notes
            .iter()
            .map(|n| {
                let wanted = n.pitch as i32 + plan.transpose as i32;
                let pitch = entry.fold(wanted);
                log.push(NoteLogEntry {
                    track: self.index,
                    onset: n.onset,
                    source_pitch: n.pitch,
                    pitch,
                    folded: pitch as i32 != wanted,
                });
                MidiNote { pitch, ..*n }
            })
            .collect();
        let track = Track::new(plan.source_track, entry.program, source.channel, notes);
        let recipe = builtin_recipe(&entry.recipe);
        let len = render_length(self.song, self.cfg);
        let dry = synthesize_track(&track, &recipe, self.cfg.sample_rate, len)?;
        let shaped = apply_dynamics(&dry, plan, self.song, &self.cfg.offsets, self.cfg.crossfade);
        let panned = apply_pan(&shaped, plan.pan)?;
        Ok((apply_reverb(&panned, plan.reverb_send, self.scheme.global.reverb_level), log))
    }
}

/// Validates the scheme and lists one job per planned track.
pub fn prepare_render<'a>(
    song: &'a MidiSong,
    scheme: &'a ArrangementScheme,
    registry: &'a InstrumentRegistry,
    cfg: &'a RenderConfig,
) -> Result<Vec<TrackJob<'a>>, RenderError> {
    let diags = validate_scheme(scheme, song, registry);
    if has_errors(&diags) {
        let first = diags.iter().find(|d| d.is_error()).expect("has an error");
        return Err(RenderError::InvalidScheme(alloc::format!("{first}")));
    }
    Ok((0..scheme.tracks.len())
        .map(|index| TrackJob {
            index,
            song,
            scheme,
            registry,
            cfg,
        })
        .collect())
}

/// Mixes finished track results (in plan order) into the master.
pub fn finish_render(
    results: Vec<(Signal, Vec<NoteLogEntry>)>,
    song: &MidiSong,
    scheme: &ArrangementScheme,
    cfg: &RenderConfig,
) -> Result<RenderOutput, RenderError> {
    let mut notes = Vec::new();
    let mut signals = Vec::with_capacity(results.len());
    for (s, log) in results {
        signals.push(s);
        notes.extend(log);
    }
    let master = mixdown(&signals, scheme.global.master_gain, cfg.sample_rate, render_length(song, cfg))?;
    Ok(RenderOutput { master, notes })
}

/// Sequential render. The std crate offers a parallel variant with the
/// same output.
pub fn render_scheme(
    song: &MidiSong,
    scheme: &ArrangementScheme,
    registry: &InstrumentRegistry,
    cfg: &RenderConfig,
) -> Result<RenderOutput, RenderError> {
    let jobs = prepare_render(song, scheme, registry, cfg)?;
    let results = jobs.iter().map(TrackJob::run).collect::<Result<Vec<_>, _>>()?;
    finish_render(results, song, scheme, cfg)
}
