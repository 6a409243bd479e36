//! Language-model agents: a sequential assessment chat that scores a melody
//! against nineteen criteria, a regenerate gate, and an arrangement group
//! chat that writes the scheme the renderer executes.

mod arrange;
mod assess;
mod mock;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::sync::atomic::{AtomicU64, Ordering};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use arrange::{arrangement_agents, run_arrangement, ArrangeOptions, ARRANGEMENT_ORDER};
pub use assess::{
    assessment_agents, compose_with_gate, gate, mean_musicality, musicality_score, run_assessment, Criterion,
    GateDecision, GateOutcome, ScoreCard, ASSESSMENT_ORDER, CRITERIA, DEFAULT_GATE_THRESHOLD, DEFAULT_MAX_ATTEMPTS,
};
pub use mock::{verdicts_reply, HeuristicMockBackend, ScriptedBackend, ScriptedReply};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentName {
    Mode,
    Melody,
    Harmony,
    Rhythm,
    Emotion,
    Analyze,
    Arrange,
    Instrument,
    Volume,
    Mixing,
    Reviewer,
    Execution,
}

impl AgentName {
    pub const ALL: [AgentName; 12] = [
        AgentName::Mode,
        AgentName::Melody,
        AgentName::Harmony,
        AgentName::Rhythm,
        AgentName::Emotion,
        AgentName::Analyze,
        AgentName::Arrange,
        AgentName::Instrument,
        AgentName::Volume,
        AgentName::Mixing,
        AgentName::Reviewer,
        AgentName::Execution,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentName::Mode => "Mode",
            AgentName::Melody => "Melody",
            AgentName::Harmony => "Harmony",
            AgentName::Rhythm => "Rhythm",
            AgentName::Emotion => "Emotion",
            AgentName::Analyze => "Analyze",
            AgentName::Arrange => "Arrange",
            AgentName::Instrument => "Instrument",
            AgentName::Volume => "Volume",
            AgentName::Mixing => "Mixing",
            AgentName::Reviewer => "Reviewer",
            AgentName::Execution => "Execution",
        }
    }

    pub fn parse(s: &str) -> Option<AgentName> {
        Self::ALL.into_iter().find(|a| a.as_str().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for AgentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    RolePlay,
    ChainOfThought,
    FewShot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub name: AgentName,
    pub role_prompt: String,
    pub techniques: Vec<Technique>,
    /// (input, output) pairs; outputs show the expected JSON template.
    pub few_shot_examples: Vec<(String, String)>,
    /// Extra step-by-step instructions used when chain-of-thought is on.
    #[serde(default)]
    pub reasoning_steps: Vec<String>,
}

impl AgentSpec {
    pub fn uses(&self, t: Technique) -> bool {
        self.techniques.contains(&t)
    }

    /// The system prompt sent with every request from this agent.
    pub fn system_prompt(&self) -> String {
        let mut s = String::new();
        if self.uses(Technique::RolePlay) {
            s.push_str(&format!("You are the {} agent. ", self.name));
        }
        s.push_str(&self.role_prompt);
        if self.uses(Technique::ChainOfThought) && !self.reasoning_steps.is_empty() {
            s.push_str("\n\nWork through these steps in order before answering:");
            for (i, step) in self.reasoning_steps.iter().enumerate() {
                s.push_str(&format!("\n{}. {}", i + 1, step));
            }
        }
        if self.uses(Technique::FewShot) {
            for (input, output) in &self.few_shot_examples {
                s.push_str("\n\nExample input:\n");
                s.push_str(input);
                s.push_str("\nExample output:\n");
                s.push_str(output);
            }
        }
        s.push_str("\n\nAnswer with a single fenced ```json block.");
        s
    }
}

/// Checks the rules every agent roster must satisfy.
pub fn check_roster(agents: &[AgentSpec]) -> Result<(), AgentError> {
    for (i, a) in agents.iter().enumerate() {
        if agents[..i].iter().any(|b| b.name == a.name) {
            return Err(AgentError::invalid(format!("agent {} appears twice", a.name)));
        }
        if a.role_prompt.trim().is_empty() {
            return Err(AgentError::invalid(format!("agent {} has an empty role prompt", a.name)));
        }
        if a.uses(Technique::FewShot) && a.few_shot_examples.is_empty() {
            return Err(AgentError::invalid(format!("agent {} uses few-shot prompting without examples", a.name)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    /// Speaking agent for assistant messages in a group chat.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            name: None,
            content: content.into(),
        }
    }

    pub fn assistant(name: AgentName, content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            name: Some(name.as_str().to_string()),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub agent: AgentName,
    pub system_prompt: String,
    pub conversation: Vec<ChatMessage>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct BackendError(pub String);

pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;

    /// True when identical requests always get identical answers.
    fn deterministic(&self) -> bool;

    /// False when calls must not overlap.
    fn concurrent(&self) -> bool {
        true
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for &B {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
    fn deterministic(&self) -> bool {
        (**self).deterministic()
    }
    fn concurrent(&self) -> bool {
        (**self).concurrent()
    }
}

/// Source of transcript timestamps, in milliseconds.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

/// Counts turns instead of reading a wall clock, keeping transcripts
/// reproducible.
#[derive(Debug, Default)]
pub struct LogicalClock(AtomicU64);

impl Clock for LogicalClock {
    fn now_ms(&self) -> u64 {
        self.0.fetch_add(1, Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub agent: AgentName,
    pub prompt: String,
    pub response: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTranscript {
    pub turns: Vec<ChatTurn>,
}

impl ChatTranscript {
    /// Index of the first turn spoken by `agent`.
    pub fn first_position(&self, agent: AgentName) -> Option<usize> {
        self.turns.iter().position(|t| t.agent == agent)
    }

    pub fn count(&self, agent: AgentName) -> usize {
        self.turns.iter().filter(|t| t.agent == agent).count()
    }

    /// True when each listed agent speaks, and first speaks after the one
    /// before it.
    pub fn follows_order(&self, order: &[AgentName]) -> bool {
        let pos: Option<Vec<usize>> = order.iter().map(|a| self.first_position(*a)).collect();
        pos.is_some_and(|p| p.windows(2).all(|w| w[0] < w[1]))
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for t in &self.turns {
            s.push_str(&serde_json::to_string(t).expect("turn serializes"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let turns = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<ChatTurn>, _>>()?;
        Ok(ChatTranscript { turns })
    }

    pub fn append(&mut self, other: ChatTranscript) {
        self.turns.extend(other.turns);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AgentErrorKind {
    Backend(String),
    Unparseable(AgentName),
    InvalidInput(String),
}

/// A failed chat, carrying whatever was said before the failure.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}", describe(&self.kind))]
pub struct AgentError {
    pub kind: AgentErrorKind,
    pub transcript: ChatTranscript,
}

fn describe(kind: &AgentErrorKind) -> String {
    match kind {
        AgentErrorKind::Backend(m) => format!("language model backend failed: {m}"),
        AgentErrorKind::Unparseable(a) => format!("{a} agent did not produce a usable answer after a retry"),
        AgentErrorKind::InvalidInput(m) => format!("invalid input: {m}"),
    }
}

impl AgentError {
    pub fn invalid(message: impl Into<String>) -> Self {
        AgentError {
            kind: AgentErrorKind::InvalidInput(message.into()),
            transcript: ChatTranscript::default(),
        }
    }
}

/// Pulls the JSON payload out of a reply: the first ```json fenced block,
/// else the first plain fenced block, else the whole text.
pub fn extract_json(reply: &str) -> Option<serde_json::Value> {
    let fenced = |tag: &str| -> Option<&str> {
        let start = reply.find(tag)? + tag.len();
        let rest = &reply[start..];
        let end = rest.find("```")?;
        Some(&rest[..end])
    };
    let body = fenced("```json").or_else(|| fenced("```")).unwrap_or(reply);
    serde_json::from_str(body.trim()).ok()
}

/// Wraps a JSON value the way agents are asked to answer.
pub fn fence_json(value: &serde_json::Value) -> String {
    format!("```json\n{}\n```", serde_json::to_string(value).expect("value serializes"))
}

const RETRY_NOTE: &str =
    "Your previous answer did not follow the required format. Answer again with only the fenced ```json block.";

/// One agent turn with a single format retry. `accept` validates a reply;
/// `Ok(None)` means both attempts were unusable.
pub(crate) fn speak<T>(
    backend: &dyn LlmBackend,
    clock: &dyn Clock,
    spec: &AgentSpec,
    conversation: &[ChatMessage],
    transcript: &mut ChatTranscript,
    mut accept: impl FnMut(&str) -> Option<T>,
) -> Result<(Option<T>, String), AgentError> {
    let system_prompt = spec.system_prompt();
    let mut convo: Vec<ChatMessage> = conversation.to_vec();
    let mut last = String::new();
    for attempt in 0..2 {
        let request = CompletionRequest {
            agent: spec.name,
            system_prompt: system_prompt.clone(),
            conversation: convo.clone(),
        };
        let prompt = convo.last().map(|m| m.content.clone()).unwrap_or_default();
        let reply = match backend.complete(&request) {
            Ok(r) => r,
            // a transport failure gets the same single retry as a bad format
            Err(e) if attempt == 0 => {
                transcript.turns.push(ChatTurn {
                    agent: spec.name,
                    prompt,
                    response: format!("[backend error] {e}"),
                    timestamp: clock.now_ms(),
                });
                continue;
            }
            Err(e) => {
                transcript.turns.push(ChatTurn {
                    agent: spec.name,
                    prompt,
                    response: format!("[backend error] {e}"),
                    timestamp: clock.now_ms(),
                });
                return Err(AgentError {
                    kind: AgentErrorKind::Backend(e.0),
                    transcript: transcript.clone(),
                });
            }
        };
        transcript.turns.push(ChatTurn {
            agent: spec.name,
            prompt,
            response: reply.clone(),
            timestamp: clock.now_ms(),
        });
        if let Some(v) = accept(&reply) {
            return Ok((Some(v), reply));
        }
        convo.push(ChatMessage::assistant(spec.name, reply.clone()));
        convo.push(ChatMessage::user(RETRY_NOTE));
        last = reply;
    }
    Ok((None, last))
}

/// Text between the ```abc fence of a prompt, as the mock reads it.
pub(crate) fn abc_block(text: &str) -> Option<&str> {
    let start = text.find("```abc\n")? + 7;
    let rest = &text[start..];
    Some(&rest[..rest.find("```")?])
}
