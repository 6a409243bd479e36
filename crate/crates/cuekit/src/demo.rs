//! The bundled demo: a reference song, a short synthetic clip and its
//! visual labels, run through every stage with the offline backends.

use std::path::{Path, PathBuf};

use cuekit_core::conditioning::synthesize_click_track;
use cuekit_core::metrics::{detect_onsets, rhythm_xcorr};
use cuekit_core::notation::{parse_midi, write_midi, MidiNote, MidiSong, Track};
use cuekit_core::vision::{encode_raw_stream, FrameSequence, VisualReport};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::io::{decode_wav, load_frames, write_atomic};
use crate::pipeline::{Engine, PipelineError};
use crate::project::{ClipRef, Stage};

pub const DEMO_REPORT: &str = include_str!("../assets/demo/report.json");
pub const CLIP_SECONDS: f64 = 8.0;
pub const FRAME_RATE: f64 = 12.0;

/// Lead line on a quarter-second grid over sustained strings and a bass
/// line, 120 BPM in 4/4. The lead covers most of the clip, so it is the
/// track spotting picks.
pub fn reference_song() -> MidiSong {
    // (start in grid steps, length in grid steps, pitch)
    let lead: [(u32, u32, u8); 21] = [
        (0, 2, 67), (2, 1, 69), (3, 1, 71), (4, 2, 72), (6, 2, 71),
        (8, 1, 69), (9, 1, 67), (10, 2, 64), (12, 4, 67),
        (16, 2, 65), (18, 1, 67), (19, 1, 69), (20, 2, 71), (22, 2, 69),
        (24, 1, 67), (25, 1, 65), (26, 2, 64), (28, 1, 62), (29, 1, 64),
        (30, 1, 65), (31, 1, 62),
    ];
    let step = 0.25;
    let notes = |spec: &[(u32, u32, u8)], vel| {
        spec.iter()
            .map(|&(s, l, p)| MidiNote::new(s as f64 * step, l as f64 * step, p, vel))
            .collect::<Vec<_>>()
    };
    let lead_notes = notes(&lead, 96);
    let pad: Vec<MidiNote> = [(0.0, 48), (2.0, 53), (4.0, 50), (6.0, 55)]
        .iter()
        .map(|&(t, p)| MidiNote::new(t, 2.0, p, 60))
        .collect();
    let bass: Vec<MidiNote> = (0..8).map(|i| MidiNote::new(i as f64, 0.5, [36, 36, 41, 41, 38, 38, 43, 43][i], 80)).collect();
    MidiSong::new(vec![
        Track::new(0, 40, 0, lead_notes),
        Track::new(1, 48, 1, pad),
        Track::new(2, 32, 2, bass),
    ])
}

/// A bright block drifting across a dark field, with a cut to a lighter
/// background halfway through.
pub fn demo_frames() -> FrameSequence {
    let (w, h) = (64usize, 48usize);
    let count = (CLIP_SECONDS * FRAME_RATE) as usize;
    let frames = (0..count)
        .map(|k| {
            let second_shot = k >= count / 2;
            let background = if second_shot { 150u8 } else { 30u8 };
            let x0 = (k * 2) % (w - 12);
            let y0 = if second_shot { 30 } else { 10 };
            let mut f = vec![background; w * h];
            for y in y0..y0 + 10 {
                for x in x0..x0 + 12 {
                    f[y * w + x] = if second_shot { 20 } else { 230 };
                }
            }
            f
        })
        .collect();
    // fixed sizes and a positive rate always make a valid sequence
    FrameSequence::new(w, h, FRAME_RATE, frames).expect("demo frames are well formed")
}

/// Settings the demo runs with: default backends, a finer chroma hop so
/// the stub places notes close to the spots, two render threads.
pub fn demo_config(root: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.projects_dir = root.join("projects");
    c.chroma.window = 2048;
    c.chroma.hop = 500;
    c.render_threads = 2;
    c
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoSummary {
    pub project: String,
    pub stage: Stage,
    pub revision: u64,
    pub spots: usize,
    pub description: String,
    pub musicality: Option<u8>,
    pub gate_attempts: Option<u32>,
    pub render: PathBuf,
    pub render_bytes: usize,
    /// Normalized onset correlation between the render and the click
    /// track of the spots.
    pub rhythm_peak: f64,
    pub rhythm_lag: f64,
}

/// Writes the fixtures under `root/fixtures`, then runs every stage on
/// them. Nothing depends on the clock or the thread count, so two runs
/// give byte-identical renders.
pub fn run_demo(root: &Path, config: PipelineConfig) -> Result<DemoSummary, PipelineError> {
    let io = |e: crate::io::IoError| PipelineError::Setup(e.to_string());
    let fixtures = root.join("fixtures");
    let midi = write_midi(&reference_song()).map_err(|e| PipelineError::Invalid(e.to_string()))?;
    write_atomic(&fixtures.join("reference.mid"), &midi).map_err(io)?;
    let raw = encode_raw_stream(&demo_frames()).map_err(|e| PipelineError::Invalid(e.to_string()))?;
    write_atomic(&fixtures.join("clip.ckfs"), &raw).map_err(io)?;
    write_atomic(&fixtures.join("report.json"), DEMO_REPORT.as_bytes()).map_err(io)?;

    let engine = Engine::new(config)?;
    let song = parse_midi(&midi).map_err(|e| PipelineError::Invalid(e.to_string()))?;
    let frames = load_frames(&fixtures.join("clip.ckfs"), FRAME_RATE).map_err(io)?;
    let report: VisualReport = serde_json::from_str(DEMO_REPORT).map_err(|e| PipelineError::Invalid(e.to_string()))?;
    let clip = ClipRef {
        source: Some("fixtures/clip.ckfs".into()),
        duration: CLIP_SECONDS,
        frame_rate: Some(FRAME_RATE),
    };

    let mut p = engine.spot_from_song("demo", &song, clip)?;
    let out = engine.describe(&mut p, report, Some(&frames), None, None)?;
    engine.commit(&p, out)?;
    for stage in [Engine::generate, Engine::assess, Engine::arrange, Engine::render] {
        let out = stage(&engine, &mut p)?;
        engine.commit(&p, out)?;
    }

    let latest = p.renders.last().cloned().ok_or_else(|| PipelineError::Invalid("no render".into()))?;
    let path = engine.store.render_path(&p.id, &latest);
    let bytes = std::fs::read(&path).map_err(|e| PipelineError::Setup(format!("{}: {e}", path.display())))?;
    let rendered = decode_wav(&bytes, &path).map_err(io)?;
    let click = synthesize_click_track(&p.spots, rendered.sample_rate).map_err(|e| PipelineError::Invalid(e.to_string()))?;
    let x = rhythm_xcorr(&detect_onsets(&click), &detect_onsets(&rendered), 0.05)
        .map_err(|e| PipelineError::Invalid(e.to_string()))?;
    Ok(DemoSummary {
        project: p.id.clone(),
        stage: p.stage,
        revision: p.revision,
        spots: p.spots.onsets.len(),
        description: p.description.clone().unwrap_or_default(),
        musicality: p.scorecard.as_ref().map(|c| c.total),
        gate_attempts: p.gate.as_ref().map(|g| g.attempts),
        render: path,
        render_bytes: bytes.len(),
        rhythm_peak: x.normalized,
        rhythm_lag: x.lag,
    })
}
