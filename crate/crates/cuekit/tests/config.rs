use std::collections::HashMap;
use std::io::Write;

use cuekit::config::{ConfigError, PipelineConfig};

#[test]
fn defaults_validate() {
    let c = PipelineConfig::default();
    c.validate().unwrap();
    assert_eq!((c.gate.threshold, c.gate.max_attempts), (12, 3));
    assert_eq!(c.render.sample_rate, 48_000);
    assert_eq!(c.generator.backend, "stub");
    assert_eq!(c.llm.backend, "mock");
}

#[test]
fn file_values_and_range_errors() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "render_threads = 3\n[gate]\nthreshold = 12\n[chroma]\nwindow = 2048\nhop = 512").unwrap();
    let c = PipelineConfig::load(Some(f.path())).unwrap();
    assert_eq!((c.render_threads, c.gate.threshold, c.chroma.window), (3, 12, 2048));

    let mut bad = tempfile::NamedTempFile::new().unwrap();
    writeln!(bad, "[gate]\nthreshold = 40").unwrap();
    assert!(matches!(PipelineConfig::load(Some(bad.path())), Err(ConfigError::Range { field: "gate.threshold", .. })));

    let mut unknown = tempfile::NamedTempFile::new().unwrap();
    writeln!(unknown, "colour = \"red\"").unwrap();
    assert!(matches!(PipelineConfig::load(Some(unknown.path())), Err(ConfigError::Parse { .. })));
}

#[test]
fn environment_selects_backends() {
    let env: HashMap<&str, &str> = [
        ("CUEKIT_LLM_URL", "http://localhost:9/v1/chat/completions"),
        ("CUEKIT_LLM_API_KEY", "k"),
        ("CUEKIT_GENERATOR_COMMAND", "gen --fast"),
    ]
    .into();
    let mut c = PipelineConfig::default();
    c.apply_env(|k| env.get(k).map(|v| v.to_string()));
    assert_eq!(c.llm.backend, "http");
    assert_eq!(c.llm.api_key.as_deref(), Some("k"));
    assert_eq!(c.generator.command, vec!["gen", "--fast"]);
    // keys never leave the process through serialized settings
    assert!(!toml::to_string(&c).unwrap().contains("api_key"));
}
