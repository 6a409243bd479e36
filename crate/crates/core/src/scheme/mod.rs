//! The arrangement-and-mix scheme: the plan the agents write and the
//! renderer executes.

mod registry;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diag::Diagnostic;
use crate::metrics::{InstrumentDistribution, MetricError};
use crate::notation::MidiSong;

pub use registry::{InstrumentEntry, InstrumentRegistry, RegistryError};

pub const SCHEME_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dynamic {
    Forte,
    Mezzo,
    Piano,
}

/// Gain offsets in dB for the dynamic marks and for softened measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsOffsets {
    pub forte: f64,
    pub mezzo: f64,
    pub piano: f64,
    pub soften: f64,
}

impl Default for DynamicsOffsets {
    fn default() -> Self {
        DynamicsOffsets {
            forte: 4.0,
            mezzo: 0.0,
            piano: -6.0,
            soften: -4.0,
        }
    }
}

impl DynamicsOffsets {
    pub fn gain_db(&self, d: Dynamic) -> f64 {
        match d {
            Dynamic::Forte => self.forte,
            Dynamic::Mezzo => self.mezzo,
            Dynamic::Piano => self.piano,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Breakpoint {
    pub time: f64,
    pub gain_db: f64,
}

/// How one output track is produced from a song track. Several plans may
/// share a source track; `transpose` lets a duplicate thicken the harmony.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackPlan {
    pub source_track: usize,
    #[serde(default)]
    pub transpose: i8,
    pub instrument: String,
    #[serde(default)]
    pub measure_dynamics: BTreeMap<usize, Dynamic>,
    #[serde(default)]
    pub soften: Vec<usize>,
    #[serde(default)]
    pub volume_envelope: Vec<Breakpoint>,
    #[serde(default)]
    pub pan: f64,
    #[serde(default)]
    pub reverb_send: f64,
}

impl TrackPlan {
    pub fn new(source_track: usize, instrument: &str) -> Self {
        TrackPlan {
            source_track,
            transpose: 0,
            instrument: instrument.to_string(),
            measure_dynamics: BTreeMap::new(),
            soften: Vec::new(),
            volume_envelope: Vec::new(),
            pan: 0.0,
            reverb_send: 0.0,
        }
    }

    /// Total dB offset for a measure from its mark and softening.
    pub fn measure_gain_db(&self, measure: usize, offsets: &DynamicsOffsets) -> f64 {
        let mark = self.measure_dynamics.get(&measure).copied().unwrap_or(Dynamic::Mezzo);
        let soft = if self.soften.contains(&measure) { offsets.soften } else { 0.0 };
        offsets.gain_db(mark) + soft
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalMix {
    pub reverb_level: f64,
    /// Master gain in dB.
    pub master_gain: f64,
}

impl Default for GlobalMix {
    fn default() -> Self {
        GlobalMix {
            reverb_level: 0.3,
            master_gain: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrangementScheme {
    pub version: u32,
    pub tracks: Vec<TrackPlan>,
    pub global: GlobalMix,
}

impl ArrangementScheme {
    pub fn new(tracks: Vec<TrackPlan>, global: GlobalMix) -> Self {
        ArrangementScheme {
            version: SCHEME_VERSION,
            tracks,
            global,
        }
    }
}

fn range_check(diags: &mut Vec<Diagnostic>, path: String, value: f64, lo: f64, hi: f64, what: &str) {
    if !(value.is_finite() && (lo..=hi).contains(&value)) {
        diags.push(Diagnostic::error(format!("{what} must be within [{lo}, {hi}], got {value}")).at_path(path));
    }
}

/// Checks that need only the scheme and the registry.
pub fn check_scheme(scheme: &ArrangementScheme, registry: &InstrumentRegistry) -> Vec<Diagnostic> {
    let mut d = Vec::new();
    if scheme.version != SCHEME_VERSION {
        d.push(
            Diagnostic::error(format!("unsupported scheme version {} (expected {SCHEME_VERSION})", scheme.version))
                .at_path("/version"),
        );
    }
    if scheme.tracks.is_empty() {
        d.push(Diagnostic::error("a scheme needs at least one track").at_path("/tracks"));
    }
    range_check(&mut d, "/global/reverb_level".into(), scheme.global.reverb_level, 0.0, 1.0, "reverb level");
    if !scheme.global.master_gain.is_finite() || scheme.global.master_gain > 24.0 {
        d.push(Diagnostic::error("master gain must be finite and at most +24 dB").at_path("/global/master_gain"));
    }
    for (i, t) in scheme.tracks.iter().enumerate() {
        let base = format!("/tracks/{i}");
        if registry.get(&t.instrument).is_none() {
            d.push(
                Diagnostic::error(format!(
                    "unknown instrument '{}': not in the instrument registry (version {})",
                    t.instrument, registry.version
                ))
                .at_path(format!("{base}/instrument")),
            );
        }
        range_check(&mut d, format!("{base}/pan"), t.pan, -1.0, 1.0, "pan");
        range_check(&mut d, format!("{base}/reverb_send"), t.reverb_send, 0.0, 1.0, "reverb send");
        let mut prev: Option<f64> = None;
        for (j, b) in t.volume_envelope.iter().enumerate() {
            let p = format!("{base}/volume_envelope/{j}");
            if !(b.time.is_finite() && b.time >= 0.0) {
                d.push(Diagnostic::error("breakpoint time must be a non-negative number").at_path(format!("{p}/time")));
            } else if prev.is_some_and(|q| b.time <= q) {
                d.push(Diagnostic::error("breakpoint times must be strictly increasing").at_path(format!("{p}/time")));
            }
            if !b.gain_db.is_finite() || b.gain_db > 24.0 {
                d.push(Diagnostic::error("breakpoint gain must be finite and at most +24 dB").at_path(format!("{p}/gain_db")));
            }
            prev = Some(b.time);
        }
    }
    d
}

/// Checks a scheme against the song it will be applied to. Measure and
/// track references are errors; notes outside an instrument's range are
/// warnings, since the renderer folds them by octaves.
pub fn validate_scheme(scheme: &ArrangementScheme, song: &MidiSong, registry: &InstrumentRegistry) -> Vec<Diagnostic> {
    let mut d = check_scheme(scheme, registry);
    let measures = song.measure_count();
    for (i, t) in scheme.tracks.iter().enumerate() {
        let base = format!("/tracks/{i}");
        for m in t.measure_dynamics.keys() {
            if *m >= measures {
                d.push(
                    Diagnostic::error(format!("measure {m} does not exist; the song has {measures} measures"))
                        .at_path(format!("{base}/measure_dynamics/{m}")),
                );
            }
        }
        for (j, m) in t.soften.iter().enumerate() {
            if *m >= measures {
                d.push(
                    Diagnostic::error(format!("measure {m} does not exist; the song has {measures} measures"))
                        .at_path(format!("{base}/soften/{j}")),
                );
            }
        }
        let Some(track) = song.tracks.get(t.source_track) else {
            d.push(
                Diagnostic::error(format!(
                    "source track {} does not exist; the song has {} tracks",
                    t.source_track,
                    song.tracks.len()
                ))
                .at_path(format!("{base}/source_track")),
            );
            continue;
        };
        let Some(entry) = registry.get(&t.instrument) else { continue };
        for n in &track.notes {
            let p = n.pitch as i32 + t.transpose as i32;
            if !entry.in_range(p) {
                d.push(
                    Diagnostic::warning(format!(
                        "track {i}, measure {}: pitch {p} is outside the {} range {}..{}",
                        song.measure_at(n.onset),
                        entry.name,
                        entry.low,
                        entry.high
                    ))
                    .at_path(format!("{base}/instrument")),
                );
            }
        }
    }
    d
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, key: &str, d: &mut Vec<Diagnostic>) -> Option<&'a Value> {
    let v = obj.get(key);
    if v.is_none() {
        d.push(Diagnostic::error(format!("missing field '{key}'")).at_path(format!("/{key}")));
    }
    v
}

/// Parses a scheme document. Every problem found is reported, each with
/// the JSON pointer of the offending value.
pub fn parse_scheme(text: &str, registry: &InstrumentRegistry) -> Result<ArrangementScheme, Vec<Diagnostic>> {
    let root: Value = serde_json::from_str(text)
        .map_err(|e| alloc::vec![Diagnostic::error(format!("invalid JSON: {e}")).at(e.line(), e.column())])?;
    let Value::Object(obj) = &root else {
        return Err(alloc::vec![Diagnostic::error("a scheme must be a JSON object").at_path("")]);
    };
    let mut d = Vec::new();
    for k in obj.keys() {
        if !matches!(k.as_str(), "version" | "tracks" | "global") {
            d.push(Diagnostic::error(format!("unknown field '{k}'")).at_path(format!("/{k}")));
        }
    }
    let version = field(obj, "version", &mut d).and_then(|v| match v.as_u64() {
        Some(n) if n <= u32::MAX as u64 => Some(n as u32),
        _ => {
            d.push(Diagnostic::error("version must be a positive integer").at_path("/version"));
            None
        }
    });
    let mut tracks = Vec::new();
    if let Some(v) = field(obj, "tracks", &mut d) {
        match v.as_array() {
            Some(items) => {
                for (i, item) in items.iter().enumerate() {
                    match serde_json::from_value::<TrackPlan>(item.clone()) {
                        Ok(t) => tracks.push(t),
                        Err(e) => d.push(Diagnostic::error(e.to_string()).at_path(format!("/tracks/{i}"))),
                    }
                }
            }
            None => d.push(Diagnostic::error("tracks must be an array").at_path("/tracks")),
        }
    }
    let global = field(obj, "global", &mut d).and_then(|v| match serde_json::from_value::<GlobalMix>(v.clone()) {
        Ok(g) => Some(g),
        Err(e) => {
            d.push(Diagnostic::error(e.to_string()).at_path("/global"));
            None
        }
    });
    if !d.is_empty() {
        return Err(d);
    }
    let scheme = ArrangementScheme {
        version: version.unwrap_or(SCHEME_VERSION),
        tracks,
        global: global.unwrap_or_default(),
    };
    let d = check_scheme(&scheme, registry);
    if crate::diag::has_errors(&d) {
        return Err(d);
    }
    Ok(scheme)
}

/// Canonical text: keys sorted at every level, two-space indentation and
/// shortest round-trip number formatting, so equal schemes give equal bytes.
pub fn serialize_scheme(scheme: &ArrangementScheme) -> String {
    // Value maps are ordered by key, which sorts every object
    let value = serde_json::to_value(scheme).expect("scheme serializes");
    let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
    s.push('\n');
    s
}

/// Share of note time per instrument family after arrangement: each plan
/// contributes its source track's note time under its instrument's family.
pub fn scheme_distribution(
    song: &MidiSong,
    scheme: &ArrangementScheme,
    registry: &InstrumentRegistry,
) -> Result<InstrumentDistribution, MetricError> {
    let items: Vec<(String, f64)> = scheme
        .tracks
        .iter()
        .filter_map(|t| {
            let family = registry.get(&t.instrument)?.family.clone();
            let secs = song.tracks.get(t.source_track)?.notes.iter().map(|n| n.duration).sum();
            Some((family, secs))
        })
        .collect();
    InstrumentDistribution::from_durations(items.iter().map(|(f, s)| (f.as_str(), *s)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"version":1,"tracks":[{"source_track":0,"instrument":"violin"}],"global":{"reverb_level":0.2,"master_gain":0}}"#;

    #[test]
    fn minimal_scheme_parses() {
        let s = parse_scheme(MINIMAL, &InstrumentRegistry::bundled()).unwrap();
        assert_eq!(s.tracks[0].instrument, "violin");
        assert_eq!(s.tracks[0].pan, 0.0);
    }

    #[test]
    fn pan_out_of_range_is_located() {
        let text = MINIMAL.replace("\"violin\"", "\"violin\",\"pan\":1.5");
        let d = parse_scheme(&text, &InstrumentRegistry::bundled()).unwrap_err();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].path.as_deref(), Some("/tracks/0/pan"));
    }

    #[test]
    fn unknown_instrument_names_the_registry() {
        let text = MINIMAL.replace("violin", "theremin");
        let d = parse_scheme(&text, &InstrumentRegistry::bundled()).unwrap_err();
        assert!(d[0].message.contains("registry"));
        assert_eq!(d[0].path.as_deref(), Some("/tracks/0/instrument"));
    }

    #[test]
    fn canonical_text_round_trips() {
        let reg = InstrumentRegistry::bundled();
        let mut s = parse_scheme(MINIMAL, &reg).unwrap();
        s.tracks[0].measure_dynamics.insert(10, Dynamic::Forte);
        s.tracks[0].measure_dynamics.insert(2, Dynamic::Piano);
        let text = serialize_scheme(&s);
        assert_eq!(parse_scheme(&text, &reg).unwrap(), s);
        assert!(text.find("\"global\"").unwrap() < text.find("\"tracks\"").unwrap());
    }

    #[test]
    fn registry_has_enough_instruments() {
        let reg = InstrumentRegistry::bundled();
        assert!(reg.len() >= 39);
        assert_eq!(reg.get("Violin").unwrap().low, 55);
        assert_eq!(reg.get("violin").unwrap().fold(40), 64);
    }
}
