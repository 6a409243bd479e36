use std::path::Path;
use std::process::{Command, Output};

use cuekit::demo::{reference_song, DEMO_REPORT};
use cuekit_core::notation::write_midi;

fn cuekit(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cuekit"))
        .arg("--projects")
        .arg(root.join("projects"))
        .args(args)
        .env_remove("CUEKIT_CONFIG")
        .env_remove("CUEKIT_LLM_URL")
        .env_remove("CUEKIT_LLM_COMMAND")
        .env_remove("CUEKIT_GENERATOR_COMMAND")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn usage_and_stage_errors_have_their_own_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cuekit(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(cuekit(dir.path(), &["--help"]).status.code(), Some(0));
    let p = ok(&cuekit(dir.path(), &["spot", "--onsets", "0.5,1.0,2.0", "--duration", "3"]));
    assert_eq!(p["project"], "p0001");
    assert_eq!(p["spots"], 3);
    let out = cuekit(dir.path(), &["render", "p0001"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("render"));
    assert_eq!(cuekit(dir.path(), &["generate", "p0404"]).status.code(), Some(1));
}

#[test]
fn stages_run_one_by_one_and_evaluate_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let midi = root.join("ref.mid");
    std::fs::write(&midi, write_midi(&reference_song()).unwrap()).unwrap();
    let report = root.join("report.json");
    std::fs::write(&report, DEMO_REPORT).unwrap();

    ok(&cuekit(root, &["spot", "--name", "road", "--midi", midi.to_str().unwrap()]));
    let d = ok(&cuekit(root, &["describe", "p0001", "--report", report.to_str().unwrap(), "--hints", "strings"]));
    assert_eq!(d["stage"], "Described");
    assert!(d["description"].as_str().unwrap().ends_with("strings"));
    for stage in ["generate", "assess", "arrange", "render"] {
        ok(&cuekit(root, &[stage, "p0001"]));
    }
    let wav = root.join("projects/p0001/renders");
    let render = std::fs::read_dir(&wav).unwrap().next().unwrap().unwrap().path();
    let e = ok(&cuekit(root, &["evaluate", "p0001", "--against", render.to_str().unwrap(), "--reference-midi", midi.to_str().unwrap()]));
    assert_eq!(e["metrics"]["rhythm_norm"], 1.0);
    let csv = std::fs::read_to_string(root.join("projects/p0001/evaluation.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 10);
    assert!(header.starts_with("name"));
}

#[test]
fn demo_command_finishes() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("demo");
    let out = Command::new(env!("CARGO_BIN_EXE_cuekit")).args(["demo", "--out", out_dir.to_str().unwrap()]).output().unwrap();
    let s = ok(&out);
    assert_eq!(s["stage"], "Rendered");
    assert!(Path::new(s["render"].as_str().unwrap()).is_file());
}
