use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use serde_json::{json, Value};

use super::{
    check_roster, extract_json, fence_json, speak, AgentError, AgentErrorKind, AgentName, AgentSpec, ChatMessage,
    ChatTranscript, Clock, LlmBackend, Technique,
};
use crate::diag::has_errors;
use crate::metrics::gm_family_name;
use crate::notation::{abc_to_midi, validate_abc, AbcScore};
use crate::scheme::{parse_scheme, validate_scheme, ArrangementScheme, InstrumentRegistry};
use crate::vision::{build_description, validate_visual_report, VisualReport, Vocabulary};

/// Speaking order of the group chat, following how music is produced.
pub const ARRANGEMENT_ORDER: [AgentName; 6] = [
    AgentName::Analyze,
    AgentName::Arrange,
    AgentName::Instrument,
    AgentName::Volume,
    AgentName::Mixing,
    AgentName::Reviewer,
];

pub struct ArrangeOptions<'a> {
    pub agents: &'a [AgentSpec],
    pub registry: &'a InstrumentRegistry,
    pub vocabulary: &'a Vocabulary,
    pub clock: &'a dyn Clock,
    /// How many times the Reviewer may send Instrument and Volume back.
    pub revision_rounds: u32,
}

fn spec(name: AgentName, role: &str, cot: &[&str], example_in: &str, example_out: Value) -> AgentSpec {
    let mut techniques = vec![Technique::RolePlay, Technique::FewShot];
    if !cot.is_empty() {
        techniques.push(Technique::ChainOfThought);
    }
    AgentSpec {
        name,
        role_prompt: role.to_string(),
        techniques,
        few_shot_examples: vec![(example_in.to_string(), fence_json(&example_out))],
        reasoning_steps: cot.iter().map(|s| s.to_string()).collect(),
    }
}

/// Default arrangement roster.
pub fn arrangement_agents() -> Vec<AgentSpec> {
    let ex = "A two-measure melody for a tense night chase.";
    vec![
        spec(
            AgentName::Analyze,
            "You analyze the film clip and the melody. Summarize how the scene develops and decide, for every measure, whether it should be played forte or piano.",
            &[
                "Count the harmonies (distinct sounding pitches) in each measure.",
                "Relate the counts and the scene's development to loudness.",
                "Mark every measure forte or piano.",
            ],
            ex,
            json!({"development": "tension rises towards the cut", "harmony_counts": [2, 4], "measure_dynamics": {"0": "piano", "1": "forte"}}),
        ),
        spec(
            AgentName::Arrange,
            "You arrange the piece. Specify which measures of which tracks should be softened, and duplicate tracks to increase harmony.",
            &[],
            ex,
            json!({"soften": [{"track": 0, "measures": [1]}], "duplicates": [{"source_track": 0, "transpose": -12}]}),
        ),
        spec(
            AgentName::Instrument,
            "You orchestrate. Assign an instrument from the registry to every track, keeping each part inside its instrument's range.",
            &[
                "Summarize the original instrument types of the score.",
                "Choose registry instruments that fit the scene and the original types, avoiding excessive instrumentation.",
            ],
            ex,
            json!({"original": ["acoustic grand piano"], "assignments": [{"track": 0, "instrument": "violin"}, {"track": 1, "instrument": "cello"}]}),
        ),
        spec(
            AgentName::Volume,
            "You design the volume envelope of every track as time and gain breakpoints.",
            &[],
            ex,
            json!({"envelopes": [{"track": 0, "points": [{"time": 0.0, "gain_db": -6.0}, {"time": 2.0, "gain_db": 0.0}]}]}),
        ),
        spec(
            AgentName::Mixing,
            "You mix. Set the pan of every track and the reverb level.",
            &[],
            ex,
            json!({"tracks": [{"track": 0, "pan": -0.2, "reverb_send": 0.3}], "reverb_level": 0.3}),
        ),
        spec(
            AgentName::Reviewer,
            "You review whether the arrangement and mix match the video in every aspect and examine the playing techniques and effectiveness of the instruments. Either ask Instrument and Volume for one revision, or develop the final scheme.",
            &[],
            ex,
            json!({"scheme": {"version": 1, "tracks": [{"source_track": 0, "transpose": 0, "instrument": "violin", "measure_dynamics": {"0": "piano", "1": "forte"}, "soften": [], "volume_envelope": [{"time": 0.0, "gain_db": -6.0}], "pan": -0.2, "reverb_send": 0.3}], "global": {"reverb_level": 0.3, "master_gain": 0.0}}}),
        ),
    ]
}

fn duty(agent: AgentName) -> &'static str {
    match agent {
        AgentName::Analyze => "Analyze: first count the harmonies in each measure, then summarize the development of the video and mark each measure forte or piano.",
        AgentName::Arrange => "Arrange: specify which measures of which tracks should be softened, and which tracks to duplicate (with a transposition) to increase harmony. Duplicates are numbered after the original tracks.",
        AgentName::Instrument => "Instrument: first summarize the original instrument types, then assign a registry instrument to every track including duplicates.",
        AgentName::Volume => "Volume: design a volume envelope for every track.",
        AgentName::Mixing => "Mixing: set the pan of every track and the reverb level.",
        _ => "Reviewer: review the arrangement and mix against the video. Reply with {\"revise\": [agents], \"comments\": text} to request one revision from Instrument and/or Volume, or with {\"scheme\": <final scheme>} to finish.",
    }
}

fn opening(score: &AbcScore, report: &VisualReport, description: &str, measures: usize, tracks: &[String], registry: &InstrumentRegistry) -> String {
    let mut s = String::from("Arrange and mix the melody below for the film clip.\n");
    s.push_str(&format!("Video: {description}\n"));
    s.push_str(&format!(
        "Motion: speed {:.3}, saliency {:.3}, shot cuts at {:?} s\n",
        report.motion_speed, report.motion_saliency, report.shot_cuts
    ));
    if !report.plot_development.is_empty() {
        s.push_str(&format!("Plot: {}\n", report.plot_development));
    }
    s.push_str(&format!("Measures: {measures}\n"));
    for (i, t) in tracks.iter().enumerate() {
        s.push_str(&format!("Track {i}: {t}\n"));
    }
    s.push_str("Instrument registry: ");
    s.push_str(&registry.names().collect::<Vec<_>>().join(", "));
    s.push_str("\nABC score:\n```abc\n");
    s.push_str(score.text.trim_end());
    s.push_str("\n```\n");
    s
}

enum Review {
    Revise(Vec<AgentName>, String),
    Final(ArrangementScheme),
}

/// Runs the arrangement group chat and returns the Reviewer's final
/// scheme, which must parse and fit the score's song without errors.
pub fn run_arrangement(
    score: &AbcScore,
    report: &VisualReport,
    backend: &dyn LlmBackend,
    opts: &ArrangeOptions<'_>,
) -> Result<(ArrangementScheme, ChatTranscript), AgentError> {
    if has_errors(&validate_abc(&score.text)) {
        return Err(AgentError::invalid("the ABC score does not validate"));
    }
    if has_errors(&validate_visual_report(report, opts.vocabulary)) {
        return Err(AgentError::invalid("the visual report does not validate"));
    }
    check_roster(opts.agents)?;
    let find = |name: AgentName| {
        opts.agents
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| AgentError::invalid(format!("no {name} agent in the roster")))
    };
    let song = abc_to_midi(score).map_err(|e| AgentError::invalid(format!("{e}")))?;
    let description = build_description(report, opts.vocabulary, None).map_err(|e| AgentError::invalid(format!("{e}")))?;
    let tracks: Vec<String> = song
        .tracks
        .iter()
        .map(|t| {
            let inst = opts
                .registry
                .by_program(t.program)
                .map(|e| e.name.clone())
                .unwrap_or_else(|| gm_family_name(t.program).to_string());
            format!("{inst} (program {}), {} notes", t.program, t.notes.len())
        })
        .collect();
    let mut conversation = vec![ChatMessage::user(opening(
        score,
        report,
        &description,
        song.measure_count(),
        &tracks,
        opts.registry,
    ))];
    let mut transcript = ChatTranscript::default();

    let turn = |name: AgentName, instruction: String, conversation: &mut Vec<ChatMessage>, transcript: &mut ChatTranscript| {
        let spec = find(name)?;
        conversation.push(ChatMessage::user(instruction));
        let (_, reply) = speak(backend, opts.clock, spec, conversation, transcript, |r| extract_json(r).map(|_| ()))?;
        conversation.push(ChatMessage::assistant(name, reply));
        Ok::<(), AgentError>(())
    };
    for name in &ARRANGEMENT_ORDER[..5] {
        turn(*name, duty(*name).to_string(), &mut conversation, &mut transcript)?;
    }

    let reviewer = find(AgentName::Reviewer)?;
    let mut rounds = 0;
    loop {
        conversation.push(ChatMessage::user(duty(AgentName::Reviewer)));
        let allow_revision = rounds < opts.revision_rounds;
        let (review, reply) = speak(backend, opts.clock, reviewer, &conversation, &mut transcript, |r| {
            let v = extract_json(r)?;
            if let Some(list) = v.get("revise").and_then(Value::as_array) {
                if !allow_revision {
                    return None;
                }
                let agents: Vec<AgentName> = [AgentName::Instrument, AgentName::Volume]
                    .into_iter()
                    .filter(|a| list.iter().any(|x| x.as_str().and_then(AgentName::parse) == Some(*a)))
                    .collect();
                let comments = v.get("comments").and_then(Value::as_str).unwrap_or("").to_string();
                return (!agents.is_empty()).then_some(Review::Revise(agents, comments));
            }
            let text = serde_json::to_string(v.get("scheme")?).ok()?;
            let scheme = parse_scheme(&text, opts.registry).ok()?;
            (!has_errors(&validate_scheme(&scheme, &song, opts.registry))).then_some(Review::Final(scheme))
        })?;
        conversation.push(ChatMessage::assistant(AgentName::Reviewer, reply));
        match review {
            Some(Review::Final(scheme)) => return Ok((scheme, transcript)),
            Some(Review::Revise(agents, comments)) => {
                rounds += 1;
                for a in agents {
                    let instruction = format!("The Reviewer asked for a revision: {comments}\n{}", duty(a));
                    turn(a, instruction, &mut conversation, &mut transcript)?;
                }
            }
            None => {
                return Err(AgentError {
                    kind: AgentErrorKind::Unparseable(AgentName::Reviewer),
                    transcript,
                })
            }
        }
    }
}
