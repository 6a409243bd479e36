mod common;

use common::{quantized_song, tick_aligned_song, Rng};
use cuekit_core::diag::has_errors;
use cuekit_core::notation::{abc_to_midi, midi_to_abc, parse_midi, validate_abc, write_midi, AbcOptions, AbcScore, MidiNote, MidiSong, Track};
use proptest::prelude::*;

fn multiset(song: &MidiSong, quantum: f64) -> Vec<Vec<(u8, i64)>> {
    song.tracks
        .iter()
        .map(|t| {
            let mut v: Vec<(u8, i64)> = t.notes.iter().map(|n| (n.pitch, (n.duration / quantum).round() as i64)).collect();
            v.sort();
            v
        })
        .collect()
}

#[test]
fn tick_aligned_songs_survive_the_byte_round_trip() {
    let mut rng = Rng::new(11);
    for _ in 0..100 {
        let song = tick_aligned_song(&mut rng);
        let bytes = write_midi(&song).unwrap();
        let back = parse_midi(&bytes).unwrap();
        assert_eq!(write_midi(&back).unwrap(), bytes);
        assert_eq!(back.note_count(), song.note_count());
        for (a, b) in song.tracks.iter().zip(&back.tracks) {
            assert_eq!(a.notes.len(), b.notes.len());
            for (x, y) in a.notes.iter().zip(&b.notes) {
                assert_eq!((x.pitch, x.velocity), (y.pitch, y.velocity));
                assert!((x.onset - y.onset).abs() < 1e-9 && (x.duration - y.duration).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn abc_conversion_keeps_pitch_and_length_multisets() {
    let mut rng = Rng::new(12);
    for _ in 0..100 {
        let song = quantized_song(&mut rng);
        let abc = midi_to_abc(&song, &AbcOptions::default()).unwrap().score;
        assert!(!has_errors(&validate_abc(&abc.text)), "{}", abc.text);
        let back = abc_to_midi(&abc).unwrap();
        assert_eq!(multiset(&back, 0.125), multiset(&song, 0.125), "{}", abc.text);
    }
}

#[test]
fn middle_c_quarter_note() {
    let song = MidiSong::new(vec![Track::new(0, 0, 0, vec![MidiNote::new(0.0, 0.5, 60, 90)])]);
    let abc = midi_to_abc(&song, &AbcOptions::default()).unwrap().score;
    assert!(abc.text.contains("K:C"));
    assert!(abc.text.trim_end().ends_with("C2"), "{}", abc.text);
}

#[test]
fn header_errors_are_located() {
    let diags = validate_abc("X:1\nT:t\nM:4/4\nL:1/8\nC D E F|\n");
    assert!(has_errors(&diags));
    let e = diags.iter().find(|d| d.is_error()).unwrap();
    assert!(e.message.contains("K:"), "{diags:?}");
    assert!(e.line.is_some(), "{diags:?}");
    assert!(AbcScore::parse("X:1\nM:4/4\nL:1/8\nK:C\nC D E F|\n").is_ok());
}

#[test]
fn ten_thousand_random_inputs_never_panic() {
    let mut rng = Rng::new(13);
    let seed = write_midi(&quantized_song(&mut rng)).unwrap();
    for i in 0..10_000 {
        let bytes = if i % 2 == 0 {
            let n = rng.int(0, 256) as usize;
            rng.bytes(n)
        } else {
            // mutate a valid file so the parser gets past the header
            let mut b = seed.clone();
            for _ in 0..rng.int(1, 8) {
                let at = rng.int(0, b.len() as u64 - 1) as usize;
                b[at] = rng.bytes(1)[0];
            }
            b.truncate(rng.int(0, b.len() as u64) as usize);
            b
        };
        let _ = parse_midi(&bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parser_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
        let _ = parse_midi(&bytes);
    }

    #[test]
    fn abc_text_round_trips_through_the_parser(seed in 0u64..1000) {
        let song = quantized_song(&mut Rng::new(seed));
        let abc = midi_to_abc(&song, &AbcOptions::default()).unwrap().score;
        let again = AbcScore::parse(&abc.text).unwrap();
        prop_assert_eq!(abc_to_midi(&again).unwrap(), abc_to_midi(&abc).unwrap());
    }
}
