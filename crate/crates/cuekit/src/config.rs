//! Pipeline configuration: one TOML file plus environment overrides for
//! backend endpoints and keys.

use std::path::{Path, PathBuf};

use cuekit_core::agents::{DEFAULT_GATE_THRESHOLD, DEFAULT_MAX_ATTEMPTS};
use cuekit_core::audio::SUPPORTED_RATES;
use cuekit_core::conditioning::{DEFAULT_CHROMA_HOP, DEFAULT_CHROMA_WINDOW};
use cuekit_core::melody::SpottingConfig;
use cuekit_core::render::RenderConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config value {field} out of range: {message}")]
    Range { field: &'static str, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChromaSettings {
    /// Rate the click track is synthesized at before chroma extraction.
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub downsample: usize,
}

impl Default for ChromaSettings {
    fn default() -> Self {
        ChromaSettings {
            sample_rate: 32_000,
            window: DEFAULT_CHROMA_WINDOW,
            hop: DEFAULT_CHROMA_HOP,
            downsample: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateSettings {
    pub threshold: u8,
    pub max_attempts: u32,
    pub revision_rounds: u32,
}

impl Default for GateSettings {
    fn default() -> Self {
        GateSettings {
            threshold: DEFAULT_GATE_THRESHOLD,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            revision_rounds: 1,
        }
    }
}

/// Which melody generator to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSettings {
    /// `stub` or `command`.
    pub backend: String,
    /// Program and arguments for the `command` backend.
    pub command: Vec<String>,
    pub max_duration: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for GeneratorSettings {
    fn default() -> Self {
        GeneratorSettings {
            backend: "stub".into(),
            command: Vec::new(),
            max_duration: 600.0,
            sample_rate: 32_000,
            seed: 7,
        }
    }
}

/// Which language model answers the agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    /// `mock`, `command` or `http`.
    pub backend: String,
    pub command: Vec<String>,
    /// Chat-completions endpoint for the `http` backend.
    pub url: String,
    pub model: String,
    /// Never read from the file; only from `CUEKIT_LLM_API_KEY`.
    #[serde(skip)]
    pub api_key: Option<String>,
    pub timeout_seconds: u64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            backend: "mock".into(),
            command: Vec::new(),
            url: String::new(),
            model: String::new(),
            api_key: None,
            timeout_seconds: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub projects_dir: PathBuf,
    pub bind: String,
    /// Replaces the bundled instrument registry.
    pub registry: Option<PathBuf>,
    /// Replaces the bundled label vocabulary.
    pub vocabulary: Option<PathBuf>,
    pub spotting: SpottingConfig,
    pub chroma: ChromaSettings,
    pub gate: GateSettings,
    pub render: RenderConfig,
    pub generator: GeneratorSettings,
    pub llm: LlmSettings,
    /// Worker threads for rendering; 0 lets rayon decide.
    pub render_threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            projects_dir: PathBuf::from("projects"),
            bind: "127.0.0.1:8080".into(),
            registry: None,
            vocabulary: None,
            spotting: SpottingConfig::default(),
            chroma: ChromaSettings::default(),
            gate: GateSettings::default(),
            render: RenderConfig::default(),
            generator: GeneratorSettings::default(),
            llm: LlmSettings::default(),
            render_threads: 0,
        }
    }
}

fn range(ok: bool, field: &'static str, message: impl Into<String>) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Range {
            field,
            message: message.into(),
        })
    }
}

impl PipelineConfig {
    /// Reads a TOML file, applies environment overrides and validates.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                toml::from_str(&text).map_err(|e| ConfigError::Parse {
                    path: p.to_path_buf(),
                    message: e.to_string(),
                })?
            }
            None => PipelineConfig::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok());
        cfg.validate()?;
        Ok(cfg)
    }

    /// Environment overrides. Lists are whitespace-separated.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(v) = get("CUEKIT_PROJECTS_DIR") {
            self.projects_dir = v.into();
        }
        if let Some(v) = get("CUEKIT_GENERATOR_COMMAND") {
            self.generator.backend = "command".into();
            self.generator.command = v.split_whitespace().map(String::from).collect();
        }
        if let Some(v) = get("CUEKIT_GENERATOR_SEED").and_then(|v| v.parse().ok()) {
            self.generator.seed = v;
        }
        if let Some(v) = get("CUEKIT_LLM_COMMAND") {
            self.llm.backend = "command".into();
            self.llm.command = v.split_whitespace().map(String::from).collect();
        }
        if let Some(v) = get("CUEKIT_LLM_URL") {
            self.llm.backend = "http".into();
            self.llm.url = v;
        }
        if let Some(v) = get("CUEKIT_LLM_MODEL") {
            self.llm.model = v;
        }
        if let Some(v) = get("CUEKIT_LLM_API_KEY") {
            self.llm.api_key = Some(v);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.spotting;
        range(s.coverage_threshold > 0.0 && s.coverage_threshold <= 1.0, "spotting.coverage_threshold", "must be in (0, 1]")?;
        range((0.0..=1.0).contains(&s.merge_window), "spotting.merge_window", "must be in [0, 1] seconds")?;
        let c = &self.chroma;
        range(SUPPORTED_RATES.contains(&c.sample_rate), "chroma.sample_rate", "must be 32000, 44100 or 48000")?;
        range(c.window >= 256 && c.window.is_power_of_two(), "chroma.window", "must be a power of two of at least 256")?;
        range(c.hop >= 1 && c.hop <= c.window, "chroma.hop", "must be between 1 and the window")?;
        range((1..=64).contains(&c.downsample), "chroma.downsample", "must be between 1 and 64")?;
        let g = &self.gate;
        range(g.threshold <= 19, "gate.threshold", "must be between 0 and 19")?;
        range((1..=20).contains(&g.max_attempts), "gate.max_attempts", "must be between 1 and 20")?;
        range(g.revision_rounds <= 5, "gate.revision_rounds", "must be at most 5")?;
        let r = &self.render;
        range(SUPPORTED_RATES.contains(&r.sample_rate), "render.sample_rate", "must be 32000, 44100 or 48000")?;
        range((0.0..=0.5).contains(&r.crossfade), "render.crossfade", "must be in [0, 0.5] seconds")?;
        range((0.0..=30.0).contains(&r.tail), "render.tail", "must be in [0, 30] seconds")?;
        let gen = &self.generator;
        range(matches!(gen.backend.as_str(), "stub" | "command"), "generator.backend", "must be stub or command")?;
        range(gen.backend != "command" || !gen.command.is_empty(), "generator.command", "required for the command backend")?;
        range(SUPPORTED_RATES.contains(&gen.sample_rate), "generator.sample_rate", "must be 32000, 44100 or 48000")?;
        range(gen.max_duration > 0.0 && gen.max_duration.is_finite(), "generator.max_duration", "must be positive")?;
        let l = &self.llm;
        range(matches!(l.backend.as_str(), "mock" | "command" | "http"), "llm.backend", "must be mock, command or http")?;
        range(l.backend != "command" || !l.command.is_empty(), "llm.command", "required for the command backend")?;
        range(l.backend != "http" || !l.url.is_empty(), "llm.url", "required for the http backend")?;
        range(self.render_threads <= 256, "render_threads", "must be at most 256")?;
        Ok(())
    }
}
