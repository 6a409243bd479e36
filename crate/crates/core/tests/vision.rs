mod common;

use cuekit_core::vision::{
    build_description, decode_netpbm, decode_raw_stream, detect_shot_cuts, encode_pgm, encode_raw_stream, motion_saliency,
    motion_speed, optical_flow_magnitudes, validate_visual_report, FlowParams, FlowSeries, FrameSequence, Vocabulary,
};
use proptest::prelude::*;

/// A bright square sliding right one pixel per frame over a gradient.
fn sliding_square(frames: usize) -> FrameSequence {
    let (w, h) = (32, 24);
    let images = (0..frames)
        .map(|k| {
            (0..w * h)
                .map(|i| {
                    let (x, y) = (i % w, i / w);
                    let inside = x >= 4 + k && x < 12 + k && (8..16).contains(&y);
                    if inside { 230 } else { (x * 3) as u8 }
                })
                .collect()
        })
        .collect();
    FrameSequence::new(w, h, 12.0, images).unwrap()
}

#[test]
fn moving_square_has_flow_and_still_frames_do_not() {
    let flow = optical_flow_magnitudes(&sliding_square(8), FlowParams::default());
    assert_eq!(flow.magnitudes.len(), 7);
    assert!(flow.magnitudes.iter().all(|m| *m > 0.0));
    let still = FrameSequence::new(8, 8, 12.0, vec![vec![100; 64]; 4]).unwrap();
    assert!(optical_flow_magnitudes(&still, FlowParams::default()).magnitudes.iter().all(|m| *m == 0.0));
}

#[test]
fn speed_is_the_mean_and_saliency_the_spread() {
    let f = FlowSeries::new(vec![1.0, 3.0, 1.0, 3.0]).unwrap();
    assert_eq!(motion_speed(&f, 0..4).unwrap(), 2.0);
    assert_eq!(motion_saliency(&f, 0..4).unwrap(), 2.0);
    let flat = FlowSeries::new(vec![2.0; 4]).unwrap();
    assert_eq!(motion_saliency(&flat, 0..4).unwrap(), 0.0);
    assert!(motion_speed(&f, 2..2).is_err());
}

#[test]
fn cut_lands_on_the_first_new_frame() {
    let mut frames = vec![vec![20u8; 64]; 24];
    frames.extend(vec![vec![220u8; 64]; 24]);
    let seq = FrameSequence::new(8, 8, 24.0, frames).unwrap();
    assert_eq!(detect_shot_cuts(&seq), vec![1.0]);
}

#[test]
fn fixture_report_describes_itself() {
    let vocab = Vocabulary::bundled();
    let report = common::fixture_report();
    assert!(validate_visual_report(&report, &vocab).is_empty());
    let text = build_description(&report, &vocab, Some("strings")).unwrap();
    assert!(text.starts_with("setting: road"));
    assert!(text.ends_with(". strings"));
    let mut bad = report;
    bad.shot_cuts = vec![3.0, 1.0];
    assert!(build_description(&bad, &vocab, None).is_err());
}

#[test]
fn netpbm_and_stream_round_trip() {
    let pixels: Vec<u8> = (0..12).map(|i| i * 20).collect();
    assert_eq!(decode_netpbm(&encode_pgm(4, 3, &pixels)).unwrap(), (4, 3, pixels));
    let seq = sliding_square(3);
    assert_eq!(decode_raw_stream(&encode_raw_stream(&seq).unwrap()).unwrap(), seq);
    assert!(decode_raw_stream(b"CKFS").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cuts_are_increasing_and_spaced(seed in 0u64..10_000) {
        let mut rng = common::Rng::new(seed);
        let mut level = 128u8;
        let frames: Vec<Vec<u8>> = (0..80).map(|_| {
            if rng.unit() < 0.08 { level = rng.int(0, 255) as u8; }
            vec![level; 64]
        }).collect();
        let cuts = detect_shot_cuts(&FrameSequence::new(8, 8, 10.0, frames).unwrap());
        for w in cuts.windows(2) {
            prop_assert!(w[1] - w[0] >= 1.0 - 1e-9);
        }
        prop_assert!(cuts.first().is_none_or(|c| *c >= 1.0 - 1e-9));
    }

    #[test]
    fn flow_text_round_trips(values in prop::collection::vec(0.0f64..100.0, 0..40)) {
        let f = FlowSeries::new(values).unwrap();
        prop_assert_eq!(FlowSeries::from_text(&f.to_text()).unwrap(), f);
    }

    #[test]
    fn netpbm_decoder_is_total(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode_netpbm(&bytes);
        let _ = decode_raw_stream(&bytes);
    }
}
