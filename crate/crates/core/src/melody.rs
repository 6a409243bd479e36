//! Spotting: choose lead tracks by coverage, reduce them to a monophonic
//! main melody, and flatten that melody into rhythm spots.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::notation::{MidiNote, MidiSong, Track};

pub const DEFAULT_COVERAGE_THRESHOLD: f64 = 0.6;
pub const DEFAULT_MERGE_WINDOW: f64 = 0.05;

const COVERAGE_WEIGHT: f64 = 0.5;
const RATIO_WEIGHT: f64 = 0.3;
const PRIOR_WEIGHT: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MelodyError {
    #[error("total duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("song has no notes")]
    NoNotes,
    #[error("song has no non-percussion track with notes")]
    NoEligibleTracks,
    #[error("no tracks selected")]
    EmptySelection,
    #[error("selected track {0} does not exist")]
    UnknownTrack(usize),
    #[error("merge window must be non-negative")]
    NegativeWindow,
    #[error("rhythm spots invalid: {0}")]
    InvalidSpots(&'static str),
}

/// Per-track coverage and note share, plus the tracks chosen as lead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub per_track_coverage: Vec<f64>,
    pub per_track_note_ratio: Vec<f64>,
    /// `None` for percussion tracks, which never lead.
    pub lead_scores: Vec<Option<f64>>,
    pub selected_tracks: Vec<usize>,
    pub combined_coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainMelody {
    pub notes: Vec<MidiNote>,
    pub source_tracks: Vec<usize>,
}

/// Ordered onset times that the generated music should accent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RhythmSpots {
    pub clip_duration: f64,
    pub onsets: Vec<f64>,
}

impl RhythmSpots {
    /// Builds spots from user-supplied onsets, checking the invariants.
    pub fn new(onsets: Vec<f64>, clip_duration: f64) -> Result<Self, MelodyError> {
        let spots = RhythmSpots {
            clip_duration,
            onsets,
        };
        spots.validate(0.0)?;
        Ok(spots)
    }

    /// Onsets must be finite, strictly increasing, inside the clip and at
    /// least `merge_window` apart.
    pub fn validate(&self, merge_window: f64) -> Result<(), MelodyError> {
        if !(self.clip_duration > 0.0) || !self.clip_duration.is_finite() {
            return Err(MelodyError::NonPositiveDuration(self.clip_duration));
        }
        if self
            .onsets
            .iter()
            .any(|&t| !t.is_finite() || t < 0.0 || t > self.clip_duration)
        {
            return Err(MelodyError::InvalidSpots("onset outside the clip"));
        }
        if self.onsets.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(MelodyError::InvalidSpots("onsets must be sorted in strictly increasing order"));
        }
        if self.onsets.windows(2).any(|w| w[1] - w[0] < merge_window) {
            return Err(MelodyError::InvalidSpots("onsets must be at least the merge window apart"));
        }
        Ok(())
    }
}

/// Lead-likelihood prior per General-MIDI family (program / 8).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPriors {
    pub by_family: [f64; 16],
}

impl Default for ClassPriors {
    fn default() -> Self {
        ClassPriors {
            by_family: [
                0.8, // piano
                0.8, // chromatic percussion
                0.8, // organ
                0.8, // guitar
                0.3, // bass
                1.0, // strings
                1.0, // ensemble and voices
                1.0, // brass
                1.0, // reed
                1.0, // pipe
                1.0, // synth lead
                0.4, // synth pad
                0.4, // synth effects
                0.8, // ethnic
                0.4, // percussive
                0.4, // sound effects
            ],
        }
    }
}

impl ClassPriors {
    pub fn prior(&self, program: u8) -> f64 {
        self.by_family[(program as usize / 8).min(15)]
    }
}

fn check_duration(total: f64) -> Result<(), MelodyError> {
    if total > 0.0 && total.is_finite() {
        Ok(())
    } else {
        Err(MelodyError::NonPositiveDuration(total))
    }
}

/// Fraction of `total_duration` covered by at least one note of the track.
pub fn track_coverage(track: &Track, total_duration: f64) -> Result<f64, MelodyError> {
    combined_coverage(core::slice::from_ref(track), total_duration)
}

/// Union coverage of several tracks by a sweep over all onsets and offsets.
pub fn combined_coverage(tracks: &[Track], total_duration: f64) -> Result<f64, MelodyError> {
    check_duration(total_duration)?;
    let refs: Vec<&Track> = tracks.iter().collect();
    Ok(sweep(&refs) / total_duration).map(|c| c.clamp(0.0, 1.0))
}

fn sweep(tracks: &[&Track]) -> f64 {
    let mut events: Vec<(f64, i32)> = Vec::new();
    for t in tracks {
        for n in &t.notes {
            events.push((n.onset, 1));
            events.push((n.offset(), -1));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut active = 0i32;
    let mut covered = 0.0;
    for pair in events.windows(2) {
        active += pair[0].1;
        if active > 0 {
            covered += pair[1].0 - pair[0].0;
        }
    }
    covered
}

/// Share of all notes held by each track.
pub fn note_ratio(song: &MidiSong) -> Result<Vec<f64>, MelodyError> {
    let total = song.note_count();
    if total == 0 {
        return Err(MelodyError::NoNotes);
    }
    Ok(song
        .tracks
        .iter()
        .map(|t| t.notes.len() as f64 / total as f64)
        .collect())
}

pub fn select_lead(song: &MidiSong, coverage_threshold: f64) -> Result<CoverageReport, MelodyError> {
    select_lead_with(song, coverage_threshold, &ClassPriors::default())
}

/// Ranks non-percussion tracks by weighted coverage, note share and class
/// prior, then adds them best-first until the union coverage reaches the
/// threshold.
pub fn select_lead_with(
    song: &MidiSong,
    coverage_threshold: f64,
    priors: &ClassPriors,
) -> Result<CoverageReport, MelodyError> {
    let eligible = |t: &Track| !t.is_percussion() && !t.notes.is_empty();
    if !song.tracks.iter().any(eligible) {
        return Err(MelodyError::NoEligibleTracks);
    }
    let total = song.duration;
    check_duration(total)?;
    let ratios = note_ratio(song)?;
    let coverage = song
        .tracks
        .iter()
        .map(|t| track_coverage(t, total))
        .collect::<Result<Vec<_>, _>>()?;
    let lead_scores: Vec<Option<f64>> = song
        .tracks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            eligible(t).then(|| {
                COVERAGE_WEIGHT * coverage[i]
                    + RATIO_WEIGHT * ratios[i]
                    + PRIOR_WEIGHT * priors.prior(t.program)
            })
        })
        .collect();
    let mut order: Vec<(usize, f64)> = lead_scores
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|s| (i, s)))
        .collect();
    // stable sort keeps lower indices first on ties
    order.sort_by(|a, b| b.1.total_cmp(&a.1));

    let mut selected = Vec::new();
    let mut chosen: Vec<&Track> = Vec::new();
    let mut combined = 0.0;
    for (i, _) in order {
        selected.push(i);
        chosen.push(&song.tracks[i]);
        combined = (sweep(&chosen) / total).clamp(0.0, 1.0);
        if combined >= coverage_threshold {
            break;
        }
    }
    Ok(CoverageReport {
        per_track_coverage: coverage,
        per_track_note_ratio: ratios,
        lead_scores,
        selected_tracks: selected,
        combined_coverage: combined,
    })
}

/// Merges the selected tracks and keeps the highest sounding pitch.
///
/// A note is cut short when a note of equal or higher pitch starts under
/// it. A lower note that starts while a higher one sounds is dropped
/// rather than resumed later, so every output onset is a real onset.
pub fn extract_main_melody(song: &MidiSong, report: &CoverageReport) -> Result<MainMelody, MelodyError> {
    if report.selected_tracks.is_empty() {
        return Err(MelodyError::EmptySelection);
    }
    let mut notes: Vec<MidiNote> = Vec::new();
    for &i in &report.selected_tracks {
        let t = song.tracks.get(i).ok_or(MelodyError::UnknownTrack(i))?;
        notes.extend_from_slice(&t.notes);
    }
    notes.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(b.pitch.cmp(&a.pitch)));
    let mut out: Vec<MidiNote> = Vec::with_capacity(notes.len());
    for n in notes {
        match out.last_mut() {
            Some(last) if last.offset() > n.onset => {
                if n.onset > last.onset && n.pitch >= last.pitch {
                    last.duration = n.onset - last.onset;
                    out.push(n);
                }
            }
            _ => out.push(n),
        }
    }
    Ok(MainMelody {
        notes: out,
        source_tracks: report.selected_tracks.clone(),
    })
}

/// Melody onsets inside the clip, dropping any that fall within
/// `merge_window` of the previously kept onset.
pub fn flatten_to_rhythm(
    melody: &MainMelody,
    clip_duration: f64,
    merge_window: f64,
) -> Result<RhythmSpots, MelodyError> {
    if !(merge_window >= 0.0) {
        return Err(MelodyError::NegativeWindow);
    }
    check_duration(clip_duration)?;
    let mut onsets: Vec<f64> = melody
        .notes
        .iter()
        .map(|n| n.onset)
        .filter(|&t| t >= 0.0 && t <= clip_duration)
        .collect();
    onsets.sort_by(f64::total_cmp);
    let mut kept: Vec<f64> = Vec::with_capacity(onsets.len());
    for t in onsets {
        match kept.last() {
            Some(&last) if t <= last || t - last < merge_window => {}
            _ => kept.push(t),
        }
    }
    Ok(RhythmSpots {
        clip_duration,
        onsets: kept,
    })
}

/// Settings for the whole spotting stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpottingConfig {
    pub coverage_threshold: f64,
    pub merge_window: f64,
    pub priors: ClassPriors,
}

impl Default for SpottingConfig {
    fn default() -> Self {
        SpottingConfig {
            coverage_threshold: DEFAULT_COVERAGE_THRESHOLD,
            merge_window: DEFAULT_MERGE_WINDOW,
            priors: ClassPriors::default(),
        }
    }
}

/// Everything the spotting stage produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spotting {
    pub report: CoverageReport,
    pub melody: MainMelody,
    pub spots: RhythmSpots,
}

/// Runs lead selection, melody extraction and flattening. The clip length
/// defaults to the song length.
pub fn spot(song: &MidiSong, clip_duration: Option<f64>, cfg: &SpottingConfig) -> Result<Spotting, MelodyError> {
    let report = select_lead_with(song, cfg.coverage_threshold, &cfg.priors)?;
    let melody = extract_main_melody(song, &report)?;
    let spots = flatten_to_rhythm(&melody, clip_duration.unwrap_or(song.duration), cfg.merge_window)?;
    Ok(Spotting {
        report,
        melody,
        spots,
    })
}
