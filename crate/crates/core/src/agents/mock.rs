use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};
use serde_json::{json, Value};

use super::assess::criteria_of;
use super::{abc_block, extract_json, fence_json, AgentName, BackendError, CompletionRequest, LlmBackend, Role};
use crate::notation::{abc_to_midi, AbcScore, MidiNote, MidiSong};
use crate::scheme::{
    serialize_scheme, ArrangementScheme, Breakpoint, Dynamic, GlobalMix, InstrumentRegistry, TrackPlan,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptedReply {
    Text(String),
    Error(String),
}

struct Script {
    replies: Vec<ScriptedReply>,
    next: AtomicUsize,
}

/// Replays canned replies per agent. Each agent's queue is consumed in
/// order and its last reply repeats once the queue runs out.
#[derive(Default)]
pub struct ScriptedBackend {
    scripts: BTreeMap<AgentName, Script>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, agent: AgentName, replies: Vec<ScriptedReply>) -> Self {
        self.scripts.insert(
            agent,
            Script {
                replies,
                next: AtomicUsize::new(0),
            },
        );
        self
    }

    pub fn text(self, agent: AgentName, reply: impl Into<String>) -> Self {
        self.with(agent, vec![ScriptedReply::Text(reply.into())])
    }

    /// Assessment replies passing every criterion except those in `failing`.
    pub fn assessment(failing: &[u8]) -> Self {
        let mut b = Self::new();
        for agent in super::ASSESSMENT_ORDER {
            b = b.text(agent, verdicts_reply(agent, |id| !failing.contains(&id)));
        }
        b
    }

    pub fn all_pass() -> Self {
        Self::assessment(&[])
    }

    /// How many requests an agent has received.
    pub fn calls(&self, agent: AgentName) -> usize {
        self.scripts.get(&agent).map_or(0, |s| s.next.load(Ordering::SeqCst))
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let script = self
            .scripts
            .get(&request.agent)
            .ok_or_else(|| BackendError(format!("no script for the {} agent", request.agent)))?;
        let i = script.next.fetch_add(1, Ordering::SeqCst);
        match script.replies.get(i).or(script.replies.last()) {
            Some(ScriptedReply::Text(t)) => Ok(t.clone()),
            Some(ScriptedReply::Error(e)) => Err(BackendError(e.clone())),
            None => Err(BackendError(format!("empty script for the {} agent", request.agent))),
        }
    }

    fn deterministic(&self) -> bool {
        // replies depend on call order, not only on the request
        false
    }
}

/// A fenced verdict reply for every criterion of `agent`.
pub fn verdicts_reply(agent: AgentName, pass: impl Fn(u8) -> bool) -> String {
    let verdicts: Vec<Value> = criteria_of(agent)
        .map(|(id, _, _)| {
            let ok = pass(*id);
            json!({"id": id, "pass": ok, "rationale": if ok { "meets the criterion" } else { "does not meet the criterion" }})
        })
        .collect();
    fence_json(&json!({ "verdicts": verdicts }))
}

/// Deterministic stand-in for a language model. It reads the ABC score
/// out of the conversation and answers every agent's duty from simple
/// measurements of the notes, so its output depends only on the request.
pub struct HeuristicMockBackend {
    registry: InstrumentRegistry,
}

impl HeuristicMockBackend {
    pub fn new(registry: InstrumentRegistry) -> Self {
        HeuristicMockBackend { registry }
    }
}

impl Default for HeuristicMockBackend {
    fn default() -> Self {
        Self::new(InstrumentRegistry::bundled())
    }
}

impl LlmBackend for HeuristicMockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let text = request
            .conversation
            .iter()
            .filter(|m| m.role == Role::User)
            .find_map(|m| abc_block(&m.content))
            .ok_or_else(|| BackendError("no ABC score in the conversation".into()))?;
        let score = AbcScore::parse(text).map_err(|e| BackendError(e.to_string()))?;
        let song = abc_to_midi(&score).map_err(|e| BackendError(e.to_string()))?;
        let reply = match request.agent {
            AgentName::Mode
            | AgentName::Melody
            | AgentName::Harmony
            | AgentName::Rhythm
            | AgentName::Emotion => {
                let f = Features::of(&song);
                verdicts_reply(request.agent, |id| f.passes(id))
            }
            AgentName::Analyze => fence_json(&analyze(&song)),
            AgentName::Arrange => fence_json(&arrange(&song)),
            AgentName::Instrument => {
                let plans = plan_sources(&song, latest(request, AgentName::Arrange).as_ref());
                fence_json(&instrument(&song, &plans, &self.registry))
            }
            AgentName::Volume => {
                let n = plan_sources(&song, latest(request, AgentName::Arrange).as_ref()).len();
                fence_json(&volume(&song, n))
            }
            AgentName::Mixing => {
                let n = plan_sources(&song, latest(request, AgentName::Arrange).as_ref()).len();
                fence_json(&mixing(n))
            }
            AgentName::Reviewer => {
                let scheme = assemble(request, &song, &self.registry);
                format!(
                    "```json\n{{\"scheme\": {}}}\n```",
                    serialize_scheme(&scheme).trim_end()
                )
            }
            AgentName::Execution => return Err(BackendError("the Execution agent is the renderer".into())),
        };
        Ok(reply)
    }

    fn deterministic(&self) -> bool {
        true
    }
}

fn latest(request: &CompletionRequest, agent: AgentName) -> Option<Value> {
    request
        .conversation
        .iter()
        .rev()
        .filter(|m| m.role == Role::Assistant && m.name.as_deref() == Some(agent.as_str()))
        .find_map(|m| extract_json(&m.content))
}

fn pitched_notes(song: &MidiSong) -> Vec<MidiNote> {
    let mut notes: Vec<MidiNote> = song
        .tracks
        .iter()
        .filter(|t| !t.is_percussion())
        .flat_map(|t| t.notes.iter().copied())
        .collect();
    notes.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.pitch.cmp(&b.pitch)));
    notes
}

const MAJOR: [usize; 7] = [0, 2, 4, 5, 7, 9, 11];

/// Measurements behind the assessment verdicts.
struct Features {
    key_fit: f64,
    halves_agree: bool,
    ends_on_tonic_triad: bool,
    distinct_measure_sets: usize,
    measures: usize,
    distinct_pitches: usize,
    repeated_interval_pair: bool,
    dissonance: f64,
    pitch_classes: usize,
    tracks: usize,
    ioi_mode_share: f64,
    ioi_mode_count: usize,
    distinct_iois: usize,
    steady_meter: bool,
    varied_lengths: bool,
}

fn best_key(notes: &[MidiNote]) -> (usize, f64) {
    let mut weight = [0.0f64; 12];
    for n in notes {
        weight[(n.pitch % 12) as usize] += n.duration;
    }
    let total: f64 = weight.iter().sum();
    if total <= 0.0 {
        return (0, 0.0);
    }
    let mut best = (0, -1.0);
    for tonic in 0..12 {
        let fit = MAJOR.iter().map(|s| weight[(tonic + s) % 12]).sum::<f64>() / total;
        if fit > best.1 + 1e-12 {
            best = (tonic, fit);
        }
    }
    best
}

impl Features {
    fn of(song: &MidiSong) -> Features {
        let notes = pitched_notes(song);
        let (tonic, key_fit) = best_key(&notes);
        let half = song.duration / 2.0;
        let (a, b): (Vec<MidiNote>, Vec<MidiNote>) = notes.iter().partition(|n| n.onset < half);
        let halves_agree = a.is_empty() || b.is_empty() || best_key(&a).0 == best_key(&b).0;
        // relative minor shares the major scale, so either tonic triad closes
        let ends_on_tonic_triad = notes.last().is_some_and(|n| {
            let pc = (n.pitch as usize + 12 - tonic) % 12;
            matches!(pc, 0 | 4 | 7 | 9)
        });
        let measures = song.measure_count().max(1);
        let mut sets: Vec<u16> = vec![0; measures];
        for n in &notes {
            let m = song.measure_at(n.onset).min(measures - 1);
            sets[m] |= 1 << (n.pitch % 12);
        }
        sets.sort_unstable();
        sets.dedup();
        let mut pitches: Vec<u8> = notes.iter().map(|n| n.pitch).collect();
        pitches.sort_unstable();
        pitches.dedup();
        let pitch_classes = {
            let mut pcs: Vec<u8> = pitches.iter().map(|p| p % 12).collect();
            pcs.sort_unstable();
            pcs.dedup();
            pcs.len()
        };
        let lead: Vec<MidiNote> = song.tracks.iter().find(|t| !t.is_percussion()).map_or(Vec::new(), |t| t.notes.clone());
        let intervals: Vec<i32> = lead.windows(2).map(|w| w[1].pitch as i32 - w[0].pitch as i32).collect();
        let pairs: Vec<(i32, i32)> = intervals.windows(2).map(|w| (w[0], w[1])).collect();
        let repeated_interval_pair = pairs.iter().enumerate().any(|(i, p)| pairs[i + 1..].contains(p));

        let mut pairs_total = 0usize;
        let mut dissonant = 0usize;
        for (i, x) in notes.iter().enumerate() {
            for y in &notes[i + 1..] {
                if y.onset >= x.offset() - 1e-9 {
                    break;
                }
                pairs_total += 1;
                if matches!((x.pitch as i32 - y.pitch as i32).unsigned_abs() % 12, 1 | 2 | 6 | 10 | 11) {
                    dissonant += 1;
                }
            }
        }
        let dissonance = if pairs_total == 0 { 0.0 } else { dissonant as f64 / pairs_total as f64 };

        let mut onsets: Vec<i64> = lead.iter().map(|n| crate::dsp::math::round(n.onset * 100.0) as i64).collect();
        onsets.dedup();
        let mut iois: Vec<i64> = onsets.windows(2).map(|w| w[1] - w[0]).collect();
        iois.sort_unstable();
        let mut counts: Vec<usize> = Vec::new();
        let mut distinct_iois = 0;
        for (i, v) in iois.iter().enumerate() {
            if i == 0 || iois[i - 1] != *v {
                distinct_iois += 1;
                counts.push(0);
            }
            *counts.last_mut().expect("pushed above") += 1;
        }
        let ioi_mode_count = counts.iter().copied().max().unwrap_or(0);
        let ioi_mode_share = if iois.is_empty() { 0.0 } else { ioi_mode_count as f64 / iois.len() as f64 };
        let mut lengths: Vec<i64> = lead.iter().map(|n| crate::dsp::math::round(n.duration * 100.0) as i64).collect();
        lengths.sort_unstable();
        lengths.dedup();

        Features {
            key_fit,
            halves_agree,
            ends_on_tonic_triad,
            distinct_measure_sets: sets.len(),
            measures,
            distinct_pitches: pitches.len(),
            repeated_interval_pair,
            dissonance,
            pitch_classes,
            tracks: song.tracks.iter().filter(|t| !t.notes.is_empty()).count(),
            ioi_mode_share,
            ioi_mode_count,
            distinct_iois,
            steady_meter: song.tempo_map.len() <= 1,
            varied_lengths: lengths.len() >= 2,
        }
    }

    fn passes(&self, id: u8) -> bool {
        match id {
            1 => self.key_fit >= 0.85,
            2 => self.halves_agree,
            3 => self.ends_on_tonic_triad,
            4 => self.distinct_measure_sets >= self.measures.min(3),
            5 => self.distinct_pitches >= 4,
            6 => self.repeated_interval_pair,
            7 => self.dissonance <= 0.25,
            8 => self.pitch_classes >= 5,
            9 => (1..=6).contains(&self.tracks),
            10 => self.dissonance <= 0.4,
            11 => self.ioi_mode_share >= 0.3,
            12 => self.steady_meter,
            13 => self.distinct_iois >= 2,
            14 => self.ioi_mode_count >= 3,
            15 => self.key_fit >= 0.85,
            16 => self.ends_on_tonic_triad || self.halves_agree,
            17 => self.ioi_mode_share >= 0.3,
            18 => (1..=6).contains(&self.tracks),
            _ => self.varied_lengths || self.distinct_pitches >= 4,
        }
    }
}

fn harmony_counts(song: &MidiSong) -> Vec<usize> {
    let measures = song.measure_count();
    let mut sets: Vec<u128> = vec![0; measures];
    for n in pitched_notes(song) {
        let m = song.measure_at(n.onset);
        if let Some(s) = sets.get_mut(m) {
            *s |= 1 << n.pitch;
        }
    }
    sets.iter().map(|s| s.count_ones() as usize).collect()
}

fn analyze(song: &MidiSong) -> Value {
    let counts = harmony_counts(song);
    let mut sorted = counts.clone();
    sorted.sort_unstable();
    let median = sorted.get(sorted.len() / 2).copied().unwrap_or(0);
    let uniform = sorted.first() == sorted.last();
    let marks: serde_json::Map<String, Value> = counts
        .iter()
        .enumerate()
        .map(|(m, c)| {
            // with no contrast in density, build towards the end
            let forte = if uniform { 2 * m >= counts.len() } else { *c >= median };
            (m.to_string(), json!(if forte { "forte" } else { "piano" }))
        })
        .collect();
    json!({
        "development": if uniform { "steady texture; let the second half grow" } else { "denser measures carry the climaxes" },
        "harmony_counts": counts,
        "measure_dynamics": marks,
    })
}

fn arrange(song: &MidiSong) -> Value {
    let measures = song.measure_count();
    let lead = song.tracks.iter().position(|t| !t.is_percussion() && !t.notes.is_empty());
    let soften: Vec<Value> = match lead {
        Some(t) if measures >= 4 => vec![json!({"track": t, "measures": [measures - 1]})],
        _ => Vec::new(),
    };
    let duplicates: Vec<Value> = lead.map_or(Vec::new(), |t| vec![json!({"source_track": t, "transpose": -12})]);
    json!({"soften": soften, "duplicates": duplicates})
}

/// (source track, transpose) for every plan: originals, then duplicates.
fn plan_sources(song: &MidiSong, arrange: Option<&Value>) -> Vec<(usize, i8)> {
    let mut out: Vec<(usize, i8)> = (0..song.tracks.len()).map(|t| (t, 0)).collect();
    let dups = arrange.and_then(|v| v.get("duplicates")).and_then(Value::as_array);
    for d in dups.into_iter().flatten() {
        let src = d.get("source_track").and_then(Value::as_u64).map(|s| s as usize);
        let tr = d.get("transpose").and_then(Value::as_i64).unwrap_or(0).clamp(-48, 48) as i8;
        if let Some(s) = src.filter(|s| *s < song.tracks.len()) {
            out.push((s, tr));
        }
    }
    out
}

fn choose(registry: &InstrumentRegistry, candidates: &[&str], pitches: &[i32]) -> String {
    let mut best: Option<(&str, usize)> = None;
    for name in candidates {
        let Some(e) = registry.get(name) else { continue };
        let inside = pitches.iter().filter(|p| e.in_range(**p)).count();
        if inside == pitches.len() {
            return e.name.clone();
        }
        if best.is_none_or(|(_, b)| inside > b) {
            best = Some((name, inside));
        }
    }
    best.map_or_else(|| String::from("acoustic grand piano"), |(n, _)| n.to_string())
}

/// Median gap between note starts below which a line counts as quick.
const QUICK_IOI: f64 = 0.3;

fn median_ioi(track: &crate::notation::Track) -> Option<f64> {
    let mut gaps: Vec<f64> = track.notes.windows(2).map(|w| w[1].onset - w[0].onset).filter(|g| *g > 1e-6).collect();
    if gaps.is_empty() {
        return None;
    }
    gaps.sort_by(f64::total_cmp);
    Some(gaps[gaps.len() / 2])
}

fn instrument(song: &MidiSong, plans: &[(usize, i8)], registry: &InstrumentRegistry) -> Value {
    let original: Vec<String> = song
        .tracks
        .iter()
        .map(|t| {
            registry
                .by_program(t.program)
                .map(|e| e.name.clone())
                .unwrap_or_else(|| crate::metrics::gm_family_name(t.program).to_string())
        })
        .collect();
    let lead = ["violin", "flute", "clarinet", "oboe", "trumpet", "acoustic grand piano"];
    let low = ["cello", "viola", "french horn", "bassoon", "contrabass", "tuba"];
    let inner = ["string ensemble", "harp", "acoustic grand piano"];
    // quick figures blur on bowed or blown attacks, so they go to plucked
    // and struck instruments
    let lead_quick = ["harp", "acoustic grand piano", "marimba", "acoustic guitar"];
    let low_quick = ["pizzicato strings", "acoustic bass", "harp", "marimba"];
    let inner_quick = ["harp", "acoustic grand piano", "vibraphone"];
    let assignments: Vec<Value> = plans
        .iter()
        .enumerate()
        .map(|(i, &(src, tr))| {
            let track = &song.tracks[src];
            let pitches: Vec<i32> = track.notes.iter().map(|n| n.pitch as i32 + tr as i32).collect();
            let quick = median_ioi(track).is_some_and(|d| d < QUICK_IOI);
            let name = if track.is_percussion() {
                String::from("timpani")
            } else if i == 0 {
                choose(registry, if quick { &lead_quick } else { &lead }, &pitches)
            } else if i >= song.tracks.len() {
                choose(registry, if quick { &low_quick } else { &low }, &pitches)
            } else {
                choose(registry, if quick { &inner_quick } else { &inner }, &pitches)
            };
            json!({"track": i, "instrument": name})
        })
        .collect();
    json!({"original": original, "assignments": assignments})
}

fn volume(song: &MidiSong, tracks: usize) -> Value {
    let d = song.duration.max(0.5);
    let rise = (d / 4.0).min(2.0);
    let mut points = vec![json!({"time": 0.0, "gain_db": -9.0}), json!({"time": rise, "gain_db": 0.0})];
    let fade = d - 1.5;
    if fade > rise {
        points.push(json!({"time": fade, "gain_db": 0.0}));
    }
    points.push(json!({"time": d, "gain_db": -12.0}));
    let envelopes: Vec<Value> = (0..tracks).map(|t| json!({"track": t, "points": points})).collect();
    json!({ "envelopes": envelopes })
}

fn mixing(tracks: usize) -> Value {
    let items: Vec<Value> = (0..tracks)
        .map(|t| {
            let pan = match t {
                0 => 0.0,
                t if t % 2 == 1 => -0.35,
                _ => 0.35,
            };
            json!({"track": t, "pan": pan, "reverb_send": if t == 0 { 0.25 } else { 0.35 }})
        })
        .collect();
    json!({"tracks": items, "reverb_level": 0.3})
}

fn track_items<'a>(v: Option<&'a Value>, key: &str) -> impl Iterator<Item = (usize, &'a Value)> {
    v.and_then(|v| v.get(key))
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
        .filter_map(|item| Some((item.get("track")?.as_u64()? as usize, item)))
}

/// The Reviewer's final scheme, put together from the other agents'
/// latest replies with neutral values wherever a reply is missing.
fn assemble(request: &CompletionRequest, song: &MidiSong, registry: &InstrumentRegistry) -> ArrangementScheme {
    let analyze = latest(request, AgentName::Analyze);
    let arrange_v = latest(request, AgentName::Arrange);
    let instrument_v = latest(request, AgentName::Instrument);
    let volume_v = latest(request, AgentName::Volume);
    let mixing_v = latest(request, AgentName::Mixing);
    let measures = song.measure_count();

    let dynamics: BTreeMap<usize, Dynamic> = analyze
        .as_ref()
        .and_then(|v| v.get("measure_dynamics"))
        .and_then(Value::as_object)
        .into_iter()
        .flatten()
        .filter_map(|(k, v)| Some((k.parse::<usize>().ok()?, serde_json::from_value::<Dynamic>(v.clone()).ok()?)))
        .filter(|(m, _)| *m < measures)
        .collect();

    let sources = plan_sources(song, arrange_v.as_ref());
    let mut plans: Vec<TrackPlan> = sources
        .iter()
        .map(|&(src, tr)| {
            let mut p = TrackPlan::new(src, "acoustic grand piano");
            p.transpose = tr;
            p.measure_dynamics = dynamics.clone();
            p
        })
        .collect();
    for (t, item) in track_items(arrange_v.as_ref(), "soften") {
        if let Some(p) = plans.get_mut(t) {
            let ms = item.get("measures").and_then(Value::as_array).into_iter().flatten();
            p.soften = ms.filter_map(Value::as_u64).map(|m| m as usize).filter(|m| *m < measures).collect();
        }
    }
    for (t, item) in track_items(instrument_v.as_ref(), "assignments") {
        let name = item.get("instrument").and_then(Value::as_str).and_then(|n| registry.get(n));
        if let (Some(p), Some(e)) = (plans.get_mut(t), name) {
            p.instrument = e.name.clone();
        }
    }
    for (t, item) in track_items(volume_v.as_ref(), "envelopes") {
        let points = item.get("points").cloned().unwrap_or(Value::Null);
        if let (Some(p), Ok(bps)) = (plans.get_mut(t), serde_json::from_value::<Vec<Breakpoint>>(points)) {
            if bps.windows(2).all(|w| w[1].time > w[0].time) && bps.iter().all(|b| b.time >= 0.0 && b.gain_db <= 24.0) {
                p.volume_envelope = bps;
            }
        }
    }
    for (t, item) in track_items(mixing_v.as_ref(), "tracks") {
        if let Some(p) = plans.get_mut(t) {
            p.pan = item.get("pan").and_then(Value::as_f64).unwrap_or(0.0).clamp(-1.0, 1.0);
            p.reverb_send = item.get("reverb_send").and_then(Value::as_f64).unwrap_or(0.0).clamp(0.0, 1.0);
        }
    }
    let reverb_level = mixing_v
        .as_ref()
        .and_then(|v| v.get("reverb_level"))
        .and_then(Value::as_f64)
        .unwrap_or(0.3)
        .clamp(0.0, 1.0);
    ArrangementScheme::new(
        plans,
        GlobalMix {
            reverb_level,
            master_gain: -3.0,
        },
    )
}
