use cuekit::demo::{demo_config, reference_song};
use cuekit::pipeline::render_parallel;
use cuekit_core::render::{render_scheme, RenderConfig};
use cuekit_core::scheme::{ArrangementScheme, GlobalMix, InstrumentRegistry, TrackPlan};

fn scheme() -> ArrangementScheme {
    let mut lead = TrackPlan::new(0, "violin");
    lead.reverb_send = 0.4;
    lead.pan = -0.2;
    let mut pad = TrackPlan::new(1, "string ensemble");
    pad.pan = 0.3;
    let mut octave = TrackPlan::new(1, "choir");
    octave.transpose = 12;
    ArrangementScheme::new(vec![lead, pad, octave, TrackPlan::new(2, "contrabass")], GlobalMix::default())
}

#[test]
fn render_ignores_the_thread_count() {
    let song = reference_song();
    let reg = InstrumentRegistry::bundled();
    let cfg = RenderConfig::default();
    let serial = render_scheme(&song, &scheme(), &reg, &cfg).unwrap().to_wav().unwrap();
    for threads in [1, 2, 4, 8] {
        let wav = render_parallel(&song, &scheme(), &reg, &cfg, threads).unwrap().to_wav().unwrap();
        assert!(wav == serial, "{threads} threads changed the render");
    }
}

#[test]
fn demo_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let s = cuekit::demo::run_demo(dir.path(), demo_config(dir.path())).unwrap();
    assert_eq!(s.stage, cuekit::project::Stage::Rendered);
    assert!(s.musicality.unwrap() >= 15);
    assert!(s.rhythm_peak >= 0.7, "peak {}", s.rhythm_peak);
    assert!(s.rhythm_lag.abs() <= 0.05);
    let p = dir.path().join("projects").join(&s.project);
    for f in ["project.json", "spots.json", "report.json", "melody.mid", "score.abc", "scheme.json", "generated.wav"] {
        assert!(p.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn evaluation_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let s = cuekit::demo::run_demo(dir.path(), demo_config(dir.path())).unwrap();
    let engine = cuekit::pipeline::Engine::new(demo_config(dir.path())).unwrap();
    let p = engine.store.load(&s.project).unwrap();
    let w = cuekit::io::read_wav(&s.render).unwrap();
    let row = engine.evaluate(&p, &w, &w, Some(&reference_song()), &[w.clone()]).unwrap();
    assert_eq!(row.rhythm_norm, Some(1.0));
    assert_eq!(row.rhythm_lag, Some(0.0));
    assert_eq!(row.dynamic_dist, Some(0.0));
    assert!(row.instr_dist.is_some());
    assert_eq!(row.diversity, None);
}
