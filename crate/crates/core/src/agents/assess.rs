use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    check_roster, fence_json, speak, AgentError, AgentName, AgentSpec, ChatMessage, ChatTranscript, Clock,
    LlmBackend, Technique,
};
use crate::diag::has_errors;
use crate::notation::{midi_to_abc, validate_abc, AbcOptions, AbcScore, MidiSong};

pub const DEFAULT_GATE_THRESHOLD: u8 = 12;
pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;

/// Speaking order of the assessment chat. Mode, Melody and Harmony are
/// chained; Rhythm and Emotion see only the score.
pub const ASSESSMENT_ORDER: [AgentName; 5] =
    [AgentName::Mode, AgentName::Melody, AgentName::Harmony, AgentName::Rhythm, AgentName::Emotion];

/// The nineteen criteria and the agent that judges each.
pub const CRITERIA: [(u8, AgentName, &str); 19] = [
    (1, AgentName::Mode, "The mode is clear."),
    (2, AgentName::Mode, "The tonality is stable."),
    (3, AgentName::Melody, "Reasonable chord progression."),
    (4, AgentName::Melody, "The chords are diverse, not monotonous."),
    (5, AgentName::Melody, "Appropriate variation."),
    (6, AgentName::Melody, "Appropriate repetition."),
    (7, AgentName::Harmony, "Very harmonious."),
    (8, AgentName::Harmony, "Rich, not monotonous."),
    (9, AgentName::Harmony, "The orchestration is reasonable."),
    (10, AgentName::Harmony, "The instruments collaborate well."),
    (11, AgentName::Rhythm, "The rhythm is clear."),
    (12, AgentName::Rhythm, "The beat is consistently the same."),
    (13, AgentName::Rhythm, "The rhythmic pattern has appropriate variation."),
    (14, AgentName::Rhythm, "The rhythmic pattern has appropriate repetition."),
    (15, AgentName::Emotion, "The mode matches the emotion."),
    (16, AgentName::Emotion, "The chord progression matches the emotion."),
    (17, AgentName::Emotion, "The rhythm matches the emotion."),
    (18, AgentName::Emotion, "The choice of instruments matches the emotion."),
    (19, AgentName::Emotion, "The playing techniques fit the emotion (e.g. staccato, legato)."),
];

pub(crate) fn criteria_of(agent: AgentName) -> impl Iterator<Item = &'static (u8, AgentName, &'static str)> {
    CRITERIA.iter().filter(move |c| c.1 == agent)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: u8,
    pub agent: AgentName,
    pub verdict: bool,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub criteria: Vec<Criterion>,
    pub total: u8,
}

impl ScoreCard {
    /// Builds a card, sorting by id and deriving the total.
    pub fn new(mut criteria: Vec<Criterion>) -> Self {
        criteria.sort_by_key(|c| c.id);
        let total = criteria.iter().filter(|c| c.verdict).count() as u8;
        ScoreCard { criteria, total }
    }

    pub fn is_consistent(&self) -> bool {
        self.total as usize == self.criteria.iter().filter(|c| c.verdict).count()
    }
}

fn example_for(agent: AgentName) -> (String, String) {
    let input = String::from("```abc\nX:1\nT:Example\nM:4/4\nL:1/8\nK:C\nC2 E2 G2 E2 | F2 A2 G4 |]\n```");
    let verdicts: Vec<Value> = criteria_of(agent)
        .map(|(id, _, _)| json!({"id": id, "pass": true, "rationale": "short reason grounded in the score"}))
        .collect();
    (input, fence_json(&json!({ "verdicts": verdicts })))
}

/// Default assessment roster with role prompts built from the criteria.
pub fn assessment_agents() -> Vec<AgentSpec> {
    let focus = |a: AgentName| match a {
        AgentName::Mode => "You are an experienced music theorist judging the mode and tonality of a melody.",
        AgentName::Melody => "You are a composer judging the melodic line and the chord progression it implies, taking the mode review into account.",
        AgentName::Harmony => "You are an orchestrator judging harmony and instrumentation, taking the mode and melody reviews into account.",
        AgentName::Rhythm => "You are a rhythm specialist judging pulse, meter and rhythmic patterns.",
        _ => "You are a film composer judging whether the music conveys a coherent emotion.",
    };
    ASSESSMENT_ORDER
        .iter()
        .map(|&name| AgentSpec {
            name,
            role_prompt: format!(
                "{} Judge each of your criteria as pass or fail with a one-sentence rationale.",
                focus(name)
            ),
            techniques: vec![Technique::RolePlay, Technique::FewShot],
            few_shot_examples: vec![example_for(name)],
            reasoning_steps: Vec::new(),
        })
        .collect()
}

fn parse_verdicts(agent: AgentName, reply: &str) -> Option<Vec<Criterion>> {
    let v = super::extract_json(reply)?;
    let items = v.get("verdicts")?.as_array()?;
    let wanted: Vec<u8> = criteria_of(agent).map(|c| c.0).collect();
    let mut out = Vec::with_capacity(wanted.len());
    for item in items {
        let id = u8::try_from(item.get("id")?.as_u64()?).ok()?;
        let verdict = item.get("pass")?.as_bool()?;
        let rationale = item.get("rationale").and_then(Value::as_str).unwrap_or("").to_string();
        if !wanted.contains(&id) || out.iter().any(|c: &Criterion| c.id == id) {
            return None;
        }
        out.push(Criterion { id, agent, verdict, rationale });
    }
    (out.len() == wanted.len()).then_some(out)
}

fn task_message(agent: AgentName, score: &AbcScore, earlier: &[(AgentName, String)]) -> String {
    let mut s = String::from("Assess the melody in the ABC score below against these criteria:\n");
    for (id, _, text) in criteria_of(agent) {
        s.push_str(&format!("{id}. {text}\n"));
    }
    s.push_str("\nABC score:\n```abc\n");
    s.push_str(score.text.trim_end());
    s.push_str("\n```\n");
    if !earlier.is_empty() {
        s.push_str("\nEarlier reviews:\n");
        for (a, reply) in earlier {
            s.push_str(&format!("[{a} agent]\n{reply}\n"));
        }
    }
    s
}

/// Runs the assessment chat. Mode, Melody and Harmony are chained, each
/// seeing the earlier replies verbatim. A reply that does not parse is
/// retried once and then scored as failing with rationale "unparseable".
pub fn run_assessment(
    score: &AbcScore,
    backend: &dyn LlmBackend,
    agents: &[AgentSpec],
    clock: &dyn Clock,
) -> Result<(ScoreCard, ChatTranscript), AgentError> {
    if has_errors(&validate_abc(&score.text)) {
        return Err(AgentError::invalid("the ABC score does not validate"));
    }
    check_roster(agents)?;
    let mut transcript = ChatTranscript::default();
    let mut chained: Vec<(AgentName, String)> = Vec::new();
    let mut criteria = Vec::with_capacity(CRITERIA.len());
    for name in ASSESSMENT_ORDER {
        let spec = agents
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| AgentError::invalid(format!("no {name} agent in the roster")))?;
        let sees_chain = matches!(name, AgentName::Melody | AgentName::Harmony);
        let prompt = task_message(name, score, if sees_chain { &chained } else { &[] });
        let (parsed, reply) = speak(backend, clock, spec, &[ChatMessage::user(prompt)], &mut transcript, |r| {
            parse_verdicts(name, r)
        })?;
        match parsed {
            Some(c) => criteria.extend(c),
            None => criteria.extend(criteria_of(name).map(|(id, _, _)| Criterion {
                id: *id,
                agent: name,
                verdict: false,
                rationale: String::from("unparseable"),
            })),
        }
        if matches!(name, AgentName::Mode | AgentName::Melody) {
            chained.push((name, reply));
        }
    }
    Ok((ScoreCard::new(criteria), transcript))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateDecision {
    Proceed,
    Regenerate,
    GiveUp,
}

pub fn gate(card: &ScoreCard, threshold: u8, attempt: u32, max_attempts: u32) -> GateDecision {
    if card.total >= threshold {
        GateDecision::Proceed
    } else if attempt < max_attempts {
        GateDecision::Regenerate
    } else {
        GateDecision::GiveUp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateOutcome<C> {
    pub candidate: C,
    pub card: ScoreCard,
    /// Generator invocations made.
    pub attempts: u32,
    pub decision: GateDecision,
    /// Set when no candidate met the threshold and the best one was kept.
    pub flagged: bool,
    pub totals: Vec<u8>,
}

/// Generate-assess loop. `attempt_fn(n)` produces and scores candidate
/// `n` (1-based). Stops at the first candidate that passes, or after
/// `max_attempts` with the best-scoring one (earliest on ties), flagged.
pub fn compose_with_gate<C, E>(
    threshold: u8,
    max_attempts: u32,
    mut attempt_fn: impl FnMut(u32) -> Result<(C, ScoreCard), E>,
) -> Result<GateOutcome<C>, E> {
    let max_attempts = max_attempts.max(1);
    let mut best: Option<(C, ScoreCard)> = None;
    let mut totals = Vec::new();
    let mut attempt = 1;
    loop {
        let (candidate, card) = attempt_fn(attempt)?;
        totals.push(card.total);
        match gate(&card, threshold, attempt, max_attempts) {
            GateDecision::Proceed => {
                return Ok(GateOutcome {
                    candidate,
                    card,
                    attempts: attempt,
                    decision: GateDecision::Proceed,
                    flagged: false,
                    totals,
                })
            }
            decision => {
                if best.as_ref().is_none_or(|(_, b)| card.total > b.total) {
                    best = Some((candidate, card));
                }
                if decision == GateDecision::GiveUp {
                    let (candidate, card) = best.expect("at least one attempt");
                    return Ok(GateOutcome {
                        candidate,
                        card,
                        attempts: attempt,
                        decision,
                        flagged: true,
                        totals,
                    });
                }
            }
        }
        attempt += 1;
    }
}

/// Agent-judged musicality of a song on the 0 to 19 scale.
pub fn musicality_score(
    song: &MidiSong,
    backend: &dyn LlmBackend,
    agents: &[AgentSpec],
    clock: &dyn Clock,
) -> Result<f64, AgentError> {
    let conv = midi_to_abc(song, &AbcOptions::default()).map_err(|e| AgentError::invalid(format!("{e}")))?;
    let (card, _) = run_assessment(&conv.score, backend, agents, clock)?;
    Ok(card.total as f64)
}

/// Mean musicality over a set, scored in order.
pub fn mean_musicality(
    songs: &[MidiSong],
    backend: &dyn LlmBackend,
    agents: &[AgentSpec],
    clock: &dyn Clock,
) -> Result<f64, AgentError> {
    if songs.is_empty() {
        return Err(AgentError::invalid("no songs to score"));
    }
    let mut sum = 0.0;
    for s in songs {
        sum += musicality_score(s, backend, agents, clock)?;
    }
    Ok(sum / songs.len() as f64)
}
