//! Symbolic music: the in-memory song model plus MIDI and ABC codecs.

mod abc;
mod midi;

pub use abc::{
    abc_to_midi, midi_to_abc, validate_abc, AbcConversion, AbcElement, AbcError, AbcKey, AbcOptions,
    AbcScore, AbcVoice, Mode,
};
pub use midi::{parse_midi, parse_midi_with_diagnostics, write_midi, MidiError, MidiErrorKind, WriteError};

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::math::round;

/// General-MIDI channel reserved for percussion (0-based).
pub const PERCUSSION_CHANNEL: u8 = 9;
pub const DEFAULT_TICKS_PER_QUARTER: u16 = 480;
pub const DEFAULT_MICROS_PER_QUARTER: u32 = 500_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MidiNote {
    /// Seconds from song start.
    pub onset: f64,
    /// Seconds, strictly positive.
    pub duration: f64,
    pub pitch: u8,
    pub velocity: u8,
}

impl MidiNote {
    pub fn new(onset: f64, duration: f64, pitch: u8, velocity: u8) -> Self {
        MidiNote {
            onset,
            duration,
            pitch,
            velocity,
        }
    }

    pub fn offset(&self) -> f64 {
        self.onset + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub index: usize,
    pub name: String,
    pub program: u8,
    pub channel: u8,
    pub notes: Vec<MidiNote>,
}

impl Track {
    pub fn new(index: usize, program: u8, channel: u8, notes: Vec<MidiNote>) -> Self {
        let mut t = Track {
            index,
            name: String::new(),
            program,
            channel,
            notes,
        };
        t.sort_notes();
        t
    }

    pub fn is_percussion(&self) -> bool {
        self.channel == PERCUSSION_CHANNEL
    }

    /// Orders notes by onset, ties broken by ascending pitch.
    pub fn sort_notes(&mut self) {
        self.notes.sort_by(|a, b| {
            a.onset
                .total_cmp(&b.onset)
                .then(a.pitch.cmp(&b.pitch))
        });
    }

    pub fn end(&self) -> f64 {
        self.notes.iter().map(MidiNote::offset).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TempoChange {
    pub tick: u32,
    pub micros_per_quarter: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSignature {
    pub numerator: u8,
    pub denominator: u8,
}

impl Default for TimeSignature {
    fn default() -> Self {
        TimeSignature {
            numerator: 4,
            denominator: 4,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SongError {
    #[error("song has no tracks")]
    NoTracks,
    #[error("ticks_per_quarter must be positive")]
    ZeroDivision,
    #[error("tempo map is empty or not sorted by tick")]
    BadTempoMap,
    #[error("time signature {0}/{1} is invalid")]
    BadTimeSignature(u8, u8),
    #[error("track {track} note {note}: {reason}")]
    BadNote {
        track: usize,
        note: usize,
        reason: &'static str,
    },
    #[error("track {0}: notes are not sorted by (onset, pitch)")]
    Unsorted(usize),
    #[error("track {0}: channel out of range")]
    BadChannel(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MidiSong {
    pub tracks: Vec<Track>,
    pub ticks_per_quarter: u16,
    pub tempo_map: Vec<TempoChange>,
    pub time_signature: TimeSignature,
    /// Latest note offset across all tracks, seconds.
    pub duration: f64,
}

impl MidiSong {
    /// Builds a song at the default resolution and tempo (480 tpq, 120 BPM, 4/4).
    pub fn new(tracks: Vec<Track>) -> Self {
        Self::with_timing(
            tracks,
            DEFAULT_TICKS_PER_QUARTER,
            vec![TempoChange {
                tick: 0,
                micros_per_quarter: DEFAULT_MICROS_PER_QUARTER,
            }],
            TimeSignature::default(),
        )
    }

    pub fn with_timing(
        mut tracks: Vec<Track>,
        ticks_per_quarter: u16,
        tempo_map: Vec<TempoChange>,
        time_signature: TimeSignature,
    ) -> Self {
        for (i, t) in tracks.iter_mut().enumerate() {
            t.index = i;
            t.sort_notes();
        }
        let mut song = MidiSong {
            tracks,
            ticks_per_quarter,
            tempo_map,
            time_signature,
            duration: 0.0,
        };
        song.refresh_duration();
        song
    }

    pub fn refresh_duration(&mut self) {
        self.duration = self.tracks.iter().map(Track::end).fold(0.0, f64::max);
    }

    pub fn note_count(&self) -> usize {
        self.tracks.iter().map(|t| t.notes.len()).sum()
    }

    pub fn initial_tempo(&self) -> u32 {
        self.tempo_map
            .first()
            .map(|t| t.micros_per_quarter)
            .unwrap_or(DEFAULT_MICROS_PER_QUARTER)
    }

    pub fn validate(&self) -> Result<(), SongError> {
        if self.tracks.is_empty() {
            return Err(SongError::NoTracks);
        }
        if self.ticks_per_quarter == 0 {
            return Err(SongError::ZeroDivision);
        }
        if self.tempo_map.is_empty()
            || self.tempo_map.windows(2).any(|w| w[0].tick > w[1].tick)
            || self.tempo_map.iter().any(|t| t.micros_per_quarter == 0)
        {
            return Err(SongError::BadTempoMap);
        }
        let ts = self.time_signature;
        if ts.numerator == 0 || ts.denominator == 0 || !ts.denominator.is_power_of_two() {
            return Err(SongError::BadTimeSignature(ts.numerator, ts.denominator));
        }
        for (ti, t) in self.tracks.iter().enumerate() {
            if t.channel > 15 {
                return Err(SongError::BadChannel(ti));
            }
            for (ni, n) in t.notes.iter().enumerate() {
                let bad = |reason| SongError::BadNote {
                    track: ti,
                    note: ni,
                    reason,
                };
                if !(n.onset >= 0.0) || !n.onset.is_finite() {
                    return Err(bad("onset must be a finite non-negative time"));
                }
                if !(n.duration > 0.0) || !n.duration.is_finite() {
                    return Err(bad("duration must be positive"));
                }
                if n.pitch > 127 {
                    return Err(bad("pitch out of range"));
                }
                if n.velocity == 0 || n.velocity > 127 {
                    return Err(bad("velocity out of range"));
                }
            }
            if t.notes.windows(2).any(|w| {
                w[0].onset > w[1].onset || (w[0].onset == w[1].onset && w[0].pitch > w[1].pitch)
            }) {
                return Err(SongError::Unsorted(ti));
            }
        }
        Ok(())
    }

    pub fn tick_to_seconds(&self, tick: u64) -> f64 {
        tick_to_seconds(&self.tempo_map, self.ticks_per_quarter, tick)
    }

    pub fn seconds_to_tick(&self, seconds: f64) -> u64 {
        seconds_to_tick(&self.tempo_map, self.ticks_per_quarter, seconds)
    }

    /// Ticks per measure from the time signature.
    pub fn measure_ticks(&self) -> u64 {
        let ts = self.time_signature;
        let tpq = self.ticks_per_quarter as u64;
        (ts.numerator as u64 * tpq * 4) / ts.denominator.max(1) as u64
    }

    /// Number of (possibly partial) measures spanned by the song.
    pub fn measure_count(&self) -> usize {
        if self.duration <= 0.0 {
            return 0;
        }
        let end_tick = self.seconds_to_tick(self.duration);
        let mt = self.measure_ticks().max(1);
        (end_tick.div_ceil(mt)).max(1) as usize
    }

    pub fn measure_start(&self, measure: usize) -> f64 {
        self.tick_to_seconds(measure as u64 * self.measure_ticks())
    }

    /// 0-based measure containing `seconds`.
    pub fn measure_at(&self, seconds: f64) -> usize {
        let tick = self.seconds_to_tick(seconds.max(0.0));
        // rounding may land exactly on the next barline for times a hair early
        let mut m = (tick / self.measure_ticks().max(1)) as usize;
        while m > 0 && self.measure_start(m) > seconds {
            m -= 1;
        }
        m
    }

    /// Moves every note boundary onto the tick grid so the song survives a
    /// MIDI round trip unchanged. Notes that would collapse keep one tick.
    pub fn snap_to_ticks(&mut self) {
        let tl = Timeline::new(&self.tempo_map, self.ticks_per_quarter);
        for t in &mut self.tracks {
            for n in &mut t.notes {
                let on = tl.tick(n.onset);
                let off = tl.tick(n.offset()).max(on + 1);
                n.onset = tl.seconds(on);
                n.duration = tl.seconds(off) - n.onset;
            }
            t.sort_notes();
        }
        self.refresh_duration();
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    tick: u64,
    seconds: f64,
    seconds_per_tick: f64,
}

/// Piecewise-linear tick/second mapping derived from a tempo map.
#[derive(Debug, Clone)]
pub(crate) struct Timeline {
    segs: Vec<Segment>,
}

impl Timeline {
    pub(crate) fn new(map: &[TempoChange], tpq: u16) -> Self {
        let tpq = tpq.max(1) as f64;
        let mut segs: Vec<Segment> = Vec::with_capacity(map.len() + 1);
        if map.first().map(|t| t.tick != 0).unwrap_or(true) {
            segs.push(Segment {
                tick: 0,
                seconds: 0.0,
                seconds_per_tick: DEFAULT_MICROS_PER_QUARTER as f64 / (tpq * 1e6),
            });
        }
        for t in map {
            let spt = t.micros_per_quarter.max(1) as f64 / (tpq * 1e6);
            if let Some(prev) = segs.last_mut() {
                if prev.tick == t.tick as u64 {
                    prev.seconds_per_tick = spt;
                    continue;
                }
            }
            let seconds = match segs.last() {
                Some(prev) => {
                    prev.seconds + (t.tick as u64 - prev.tick) as f64 * prev.seconds_per_tick
                }
                None => 0.0,
            };
            segs.push(Segment {
                tick: t.tick as u64,
                seconds,
                seconds_per_tick: spt,
            });
        }
        Timeline { segs }
    }

    pub(crate) fn seconds(&self, tick: u64) -> f64 {
        let seg = self
            .segs
            .iter()
            .rev()
            .find(|s| s.tick <= tick)
            .unwrap_or(&self.segs[0]);
        seg.seconds + (tick - seg.tick) as f64 * seg.seconds_per_tick
    }

    pub(crate) fn tick(&self, seconds: f64) -> u64 {
        let seconds = if seconds.is_finite() { seconds.max(0.0) } else { 0.0 };
        let seg = self
            .segs
            .iter()
            .rev()
            .find(|s| s.seconds <= seconds)
            .unwrap_or(&self.segs[0]);
        let ticks = round((seconds - seg.seconds) / seg.seconds_per_tick);
        seg.tick.saturating_add(ticks as u64)
    }
}

/// Converts an absolute tick to seconds through a tempo map.
pub fn tick_to_seconds(map: &[TempoChange], tpq: u16, tick: u64) -> f64 {
    Timeline::new(map, tpq).seconds(tick)
}

/// Inverse of [`tick_to_seconds`], rounded to the nearest tick.
pub fn seconds_to_tick(map: &[TempoChange], tpq: u16, seconds: f64) -> u64 {
    Timeline::new(map, tpq).tick(seconds)
}

/// Number of whole `quantum`s nearest to `value`, never below one.
pub(crate) fn quanta_at_least_one(value: f64, quantum: f64) -> u64 {
    let q = round(value / quantum);
    if q < 1.0 {
        1
    } else {
        q as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn song_120() -> MidiSong {
        MidiSong::new(vec![Track::new(0, 0, 0, vec![MidiNote::new(0.0, 0.5, 60, 100)])])
    }

    #[test]
    fn tick_seconds_at_120_bpm() {
        let s = song_120();
        assert_eq!(s.tick_to_seconds(480), 0.5);
        assert_eq!(s.seconds_to_tick(0.5), 480);
    }

    #[test]
    fn tempo_change_segments() {
        let map = vec![
            TempoChange { tick: 0, micros_per_quarter: 500_000 },
            TempoChange { tick: 960, micros_per_quarter: 1_000_000 },
        ];
        assert_eq!(tick_to_seconds(&map, 480, 960), 1.0);
        assert_eq!(tick_to_seconds(&map, 480, 1440), 2.0);
        assert_eq!(seconds_to_tick(&map, 480, 2.0), 1440);
    }

    #[test]
    fn measures_from_time_signature() {
        let mut s = song_120();
        s.tracks[0].notes = vec![MidiNote::new(0.0, 4.0, 60, 90)];
        s.refresh_duration();
        // 4/4 at 120 BPM: 2 s per measure
        assert_eq!(s.measure_count(), 2);
        assert_eq!(s.measure_start(1), 2.0);
        assert_eq!(s.measure_at(1.999), 0);
        assert_eq!(s.measure_at(2.0), 1);
    }

    #[test]
    fn validate_rejects_bad_notes() {
        let mut s = song_120();
        s.tracks[0].notes[0].duration = 0.0;
        assert!(matches!(s.validate(), Err(SongError::BadNote { .. })));
        let mut s = song_120();
        s.tracks.clear();
        assert_eq!(s.validate(), Err(SongError::NoTracks));
    }

    #[test]
    fn snap_moves_notes_onto_grid() {
        let mut s = song_120();
        s.tracks[0].notes[0] = MidiNote::new(0.0101, 0.2, 60, 90);
        s.snap_to_ticks();
        let n = s.tracks[0].notes[0];
        let on = s.seconds_to_tick(n.onset);
        assert_eq!(s.tick_to_seconds(on), n.onset);
    }
}
