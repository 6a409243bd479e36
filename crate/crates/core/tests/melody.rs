mod common;

use common::{coverage_on_grid, monophonic_line, random_song, Rng};
use cuekit_core::conditioning::synthesize_click_track;
use cuekit_core::melody::{combined_coverage, flatten_to_rhythm, spot, track_coverage, MainMelody, SpottingConfig};
use cuekit_core::metrics::detect_onsets;
use cuekit_core::notation::{MidiNote, MidiSong, Track};
use proptest::prelude::*;

#[test]
fn sweep_matches_a_millisecond_grid() {
    let mut rng = Rng::new(21);
    for _ in 0..200 {
        let span = rng.range(20.0, 90.0);
        let song = random_song(&mut rng, 8, 200, span);
        let total = song.duration;
        for t in &song.tracks {
            let refs: Vec<&MidiNote> = t.notes.iter().collect();
            let got = track_coverage(t, total).unwrap();
            assert!((got - coverage_on_grid(&refs, total)).abs() <= 2e-3);
        }
        let all: Vec<&MidiNote> = song.tracks.iter().flat_map(|t| &t.notes).collect();
        let got = combined_coverage(&song.tracks, total).unwrap();
        assert!((got - coverage_on_grid(&all, total)).abs() <= 2e-3);
    }
}

#[test]
fn click_track_onsets_come_back() {
    let mut rng = Rng::new(22);
    for _ in 0..50 {
        let notes = monophonic_line(&mut rng);
        let clip = notes.last().unwrap().offset() + 0.5;
        let melody = MainMelody { notes, source_tracks: vec![0] };
        let spots = flatten_to_rhythm(&melody, clip, 0.05).unwrap();
        let found = detect_onsets(&synthesize_click_track(&spots, 44_100).unwrap()).onset_times();
        let hits = spots.onsets.iter().filter(|s| found.iter().any(|f| (f - *s).abs() <= 0.02)).count();
        assert!(hits * 10 >= spots.onsets.len() * 9, "{hits} of {}", spots.onsets.len());
    }
}

#[test]
fn lead_line_is_spotted_over_a_drone() {
    let lead: Vec<MidiNote> = (0..16).map(|i| MidiNote::new(i as f64 * 0.5, 0.45, 72 + (i % 5) as u8, 100)).collect();
    let drone = vec![MidiNote::new(0.0, 8.0, 36, 60)];
    let song = MidiSong::new(vec![Track::new(0, 48, 0, drone), Track::new(1, 73, 1, lead)]);
    let s = spot(&song, Some(8.0), &SpottingConfig::default()).unwrap();
    assert_eq!(s.spots.onsets.len(), 16);
    assert!(s.melody.source_tracks.contains(&1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn coverage_is_a_fraction_and_union_bounds_each_track(seed in 0u64..10_000) {
        let song = random_song(&mut Rng::new(seed), 5, 60, 30.0);
        let union = combined_coverage(&song.tracks, song.duration).unwrap();
        prop_assert!((0.0..=1.0).contains(&union));
        for t in &song.tracks {
            prop_assert!(track_coverage(t, song.duration).unwrap() <= union + 1e-12);
        }
    }

    #[test]
    fn flattened_spots_are_increasing_and_spaced(seed in 0u64..10_000, window in 0.0f64..0.2) {
        let notes = monophonic_line(&mut Rng::new(seed));
        let clip = notes.last().unwrap().offset();
        let spots = flatten_to_rhythm(&MainMelody { notes, source_tracks: vec![0] }, clip, window).unwrap();
        prop_assert!(spots.validate(window).is_ok());
    }
}
