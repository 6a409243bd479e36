use cuekit_core::notation::{MidiNote, MidiSong, Track};
use cuekit_core::scheme::{
    parse_scheme, scheme_distribution, serialize_scheme, validate_scheme, ArrangementScheme, Dynamic, GlobalMix,
    InstrumentRegistry, TrackPlan,
};
use proptest::prelude::*;

fn song() -> MidiSong {
    let notes = (0..8).map(|i| MidiNote::new(i as f64 * 0.5, 0.5, 67, 80)).collect();
    MidiSong::new(vec![Track::new(0, 40, 0, notes)])
}

#[test]
fn every_problem_is_reported_with_its_path() {
    let text = r#"{"version":2,"tracks":[{"source_track":0,"instrument":"violin","pan":3},
        {"source_track":0,"instrument":"kazoo"}],"global":{"reverb_level":0.2,"master_gain":0},"extra":1}"#;
    let d = parse_scheme(text, &InstrumentRegistry::bundled()).unwrap_err();
    let paths: Vec<_> = d.iter().filter_map(|x| x.path.clone()).collect();
    assert!(paths.contains(&"/extra".to_string()), "{paths:?}");
}

#[test]
fn validation_knows_the_song() {
    let reg = InstrumentRegistry::bundled();
    let mut plan = TrackPlan::new(3, "violin");
    plan.measure_dynamics.insert(40, Dynamic::Forte);
    let d = validate_scheme(&ArrangementScheme::new(vec![plan], GlobalMix::default()), &song(), &reg);
    assert!(d.iter().any(|x| x.path.as_deref() == Some("/tracks/0/source_track")), "{d:?}");
    let ok = ArrangementScheme::new(vec![TrackPlan::new(0, "violin")], GlobalMix::default());
    assert!(validate_scheme(&ok, &song(), &reg).iter().all(|x| !x.is_error()));
}

#[test]
fn distribution_follows_the_plans() {
    let reg = InstrumentRegistry::bundled();
    let scheme = ArrangementScheme::new(vec![TrackPlan::new(0, "violin"), TrackPlan::new(0, "flute")], GlobalMix::default());
    let d = scheme_distribution(&song(), &scheme, &reg).unwrap();
    let total: f64 = d.weights.values().sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert_eq!(d.weights.len(), 2);
}

fn plan_strategy() -> impl Strategy<Value = TrackPlan> {
    (
        prop::sample::select(vec!["violin", "flute", "harp", "cello", "choir"]),
        -1.0f64..=1.0,
        0.0f64..=1.0,
        -12i8..=12,
        prop::collection::btree_map(0usize..8, prop::sample::select(vec![Dynamic::Forte, Dynamic::Mezzo, Dynamic::Piano]), 0..4),
    )
        .prop_map(|(name, pan, send, transpose, marks)| {
            let mut p = TrackPlan::new(0, name);
            p.pan = pan;
            p.reverb_send = send;
            p.transpose = transpose;
            p.measure_dynamics = marks;
            p
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_text_is_stable(plans in prop::collection::vec(plan_strategy(), 1..4), level in 0.0f64..=1.0) {
        let reg = InstrumentRegistry::bundled();
        let s = ArrangementScheme::new(plans, GlobalMix { reverb_level: level, master_gain: -3.0 });
        let text = serialize_scheme(&s);
        let back = parse_scheme(&text, &reg).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(serialize_scheme(&back), text);
    }
}
