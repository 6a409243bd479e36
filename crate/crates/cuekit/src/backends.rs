//! External backends: generator and language-model processes speaking
//! JSON over stdin/stdout, and an HTTP chat-completions client.

use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Duration;

use cuekit_core::agents::{BackendError, CompletionRequest, HeuristicMockBackend, LlmBackend, Role};
use cuekit_core::audio::Waveform;
use cuekit_core::conditioning::{ConditioningBundle, GeneratorBackend, GeneratorCaps, GeneratorError, StubGenerator};
use cuekit_core::scheme::InstrumentRegistry;
use serde_json::json;

use crate::config::{GeneratorSettings, LlmSettings};
use crate::io::decode_wav;

/// Runs `command`, feeds `input` to its stdin and returns stdout. A
/// non-zero exit is an error carrying the tail of stderr.
fn run_process(command: &[String], input: &[u8]) -> Result<Vec<u8>, String> {
    let (program, args) = command.split_first().ok_or("empty command")?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| format!("cannot start {program}: {e}"))?;
    let mut stdin = child.stdin.take().expect("stdin is piped");
    let input = input.to_vec();
    // feed stdin from a thread so a chatty child cannot deadlock on a full pipe
    let writer = std::thread::spawn(move || stdin.write_all(&input));
    let out = child.wait_with_output().map_err(|e| format!("{program}: {e}"))?;
    let _ = writer.join();
    if !out.status.success() {
        let err = String::from_utf8_lossy(&out.stderr);
        let tail: String = err.chars().rev().take(500).collect::<Vec<_>>().into_iter().rev().collect();
        return Err(format!("{program} exited with {}: {}", out.status, tail.trim()));
    }
    Ok(out.stdout)
}

/// A melody generator behind a command. The request is
/// `{"chroma", "description", "duration", "seed"}` on stdin; the reply is
/// a WAV stream on stdout.
pub struct ProcessGenerator {
    pub command: Vec<String>,
    pub caps: GeneratorCaps,
}

impl GeneratorBackend for ProcessGenerator {
    fn capabilities(&self) -> GeneratorCaps {
        self.caps
    }

    fn generate(&self, bundle: &ConditioningBundle, duration: f64, seed: u64) -> Result<Waveform, GeneratorError> {
        self.check_duration(duration)?;
        let request = json!({
            "chroma": bundle.rhythm(),
            "description": bundle.description(),
            "duration": duration,
            "seed": seed,
        });
        let bytes = serde_json::to_vec(&request).map_err(|e| GeneratorError::Backend(e.to_string()))?;
        let wav = run_process(&self.command, &bytes).map_err(GeneratorError::Backend)?;
        decode_wav(&wav, Path::new("<generator stdout>")).map_err(|e| GeneratorError::Backend(e.to_string()))
    }
}

/// A language model behind a command: the serialized
/// [`CompletionRequest`] on stdin, the reply text on stdout.
pub struct ProcessLlm {
    pub command: Vec<String>,
    pub deterministic: bool,
}

impl LlmBackend for ProcessLlm {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let bytes = serde_json::to_vec(request).map_err(|e| BackendError(e.to_string()))?;
        let out = run_process(&self.command, &bytes).map_err(BackendError)?;
        String::from_utf8(out).map_err(|_| BackendError("reply is not UTF-8".into()))
    }

    fn deterministic(&self) -> bool {
        self.deterministic
    }
}

/// OpenAI-style chat-completions endpoint.
pub struct HttpLlm {
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpLlm {
    pub fn new(url: String, model: String, api_key: Option<String>, timeout: Duration) -> Self {
        HttpLlm {
            url,
            model,
            api_key,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    /// The request body sent for `request`.
    pub fn body(&self, request: &CompletionRequest) -> serde_json::Value {
        let mut messages = vec![json!({"role": "system", "content": request.system_prompt})];
        for m in &request.conversation {
            let role = match m.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            let mut msg = json!({"role": role, "content": m.content});
            if let Some(name) = &m.name {
                msg["name"] = json!(name);
            }
            messages.push(msg);
        }
        json!({"model": self.model, "messages": messages, "temperature": 0})
    }
}

impl LlmBackend for HttpLlm {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let reply: serde_json::Value = req
            .send_json(self.body(request))
            .map_err(|e| BackendError(e.to_string()))?
            .into_json()
            .map_err(|e| BackendError(e.to_string()))?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(String::from)
            .ok_or_else(|| BackendError("response has no choices[0].message.content".into()))
    }

    fn deterministic(&self) -> bool {
        false
    }
}

pub fn build_generator(cfg: &GeneratorSettings) -> Box<dyn GeneratorBackend> {
    match cfg.backend.as_str() {
        "command" => Box::new(ProcessGenerator {
            command: cfg.command.clone(),
            caps: GeneratorCaps {
                max_duration: cfg.max_duration,
                sample_rate: cfg.sample_rate,
                concurrent: false,
            },
        }),
        _ => Box::new(StubGenerator {
            sample_rate: cfg.sample_rate,
            max_duration: cfg.max_duration,
            ..StubGenerator::default()
        }),
    }
}

pub fn build_llm(cfg: &LlmSettings, registry: &InstrumentRegistry) -> Box<dyn LlmBackend> {
    match cfg.backend.as_str() {
        "command" => Box::new(ProcessLlm {
            command: cfg.command.clone(),
            deterministic: false,
        }),
        "http" => Box::new(HttpLlm::new(
            cfg.url.clone(),
            cfg.model.clone(),
            cfg.api_key.clone(),
            Duration::from_secs(cfg.timeout_seconds.max(1)),
        )),
        _ => Box::new(HeuristicMockBackend::new(registry.clone())),
    }
}
