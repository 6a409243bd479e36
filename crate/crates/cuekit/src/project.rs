//! Projects on disk: one directory per project, one file per artifact,
//! so users can edit intermediate results directly.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use cuekit_core::agents::{ChatTranscript, GateDecision, ScoreCard};
use cuekit_core::diag::{has_errors, Diagnostic};
use cuekit_core::melody::RhythmSpots;
use cuekit_core::notation::{abc_to_midi, parse_midi, validate_abc, write_midi, AbcScore, MidiSong};
use cuekit_core::scheme::{parse_scheme, serialize_scheme, validate_scheme, ArrangementScheme, InstrumentRegistry};
use cuekit_core::vision::VisualReport;
use serde::{Deserialize, Serialize};

use crate::io::{fs_err, write_atomic, IoError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    Spotted,
    Described,
    Generated,
    Assessed,
    Arranged,
    Rendered,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// The clip a project scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRef {
    /// Frame directory or raw stream the clip came from, if any.
    #[serde(default)]
    pub source: Option<String>,
    pub duration: f64,
    #[serde(default)]
    pub frame_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderRef {
    pub revision: u64,
    /// Path relative to the project directory.
    pub path: String,
}

/// What the regenerate gate decided for the current melody.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateRecord {
    pub attempts: u32,
    pub decision: GateDecision,
    pub flagged: bool,
    pub totals: Vec<u8>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub id: String,
    pub name: String,
    pub clip: ClipRef,
    pub stage: Stage,
    pub revision: u64,
    #[serde(skip)]
    pub spots: RhythmSpots,
    #[serde(skip)]
    pub report: Option<VisualReport>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub music_hints: Option<String>,
    #[serde(skip)]
    pub melody: Option<MidiSong>,
    #[serde(skip)]
    pub abc: Option<String>,
    #[serde(default)]
    pub scorecard: Option<ScoreCard>,
    #[serde(default)]
    pub gate: Option<GateRecord>,
    #[serde(skip)]
    pub scheme: Option<ArrangementScheme>,
    #[serde(default)]
    pub renders: Vec<RenderRef>,
    #[serde(skip)]
    pub assessment_log: Option<ChatTranscript>,
    #[serde(skip)]
    pub arrangement_log: Option<ChatTranscript>,
}

/// A step was attempted before the stage it depends on.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{action} needs a project at stage {needed} or later; this project is at stage {actual}")]
pub struct StageError {
    pub action: &'static str,
    pub needed: Stage,
    pub actual: Stage,
}

/// A rejected edit, with diagnostics for the client.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EditError {
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error("{message}")]
    Invalid { message: String, diagnostics: Vec<Diagnostic> },
}

impl EditError {
    fn invalid(message: impl Into<String>, diagnostics: Vec<Diagnostic>) -> Self {
        EditError::Invalid {
            message: message.into(),
            diagnostics,
        }
    }
}

impl Project {
    pub fn new(id: String, name: String, clip: ClipRef, spots: RhythmSpots) -> Self {
        Project {
            id,
            name,
            clip,
            stage: Stage::Spotted,
            revision: 1,
            spots,
            report: None,
            description: None,
            music_hints: None,
            melody: None,
            abc: None,
            scorecard: None,
            gate: None,
            scheme: None,
            renders: Vec::new(),
            assessment_log: None,
            arrangement_log: None,
        }
    }

    pub fn require(&self, action: &'static str, needed: Stage) -> Result<(), StageError> {
        if self.stage >= needed {
            Ok(())
        } else {
            Err(StageError {
                action,
                needed,
                actual: self.stage,
            })
        }
    }

    /// Drops every artifact produced after `stage` and moves the project
    /// back to it if it was further along.
    pub fn reset_to(&mut self, stage: Stage) {
        if stage < Stage::Described {
            self.report = None;
            self.description = None;
            self.music_hints = None;
        }
        if stage < Stage::Generated {
            self.melody = None;
            self.abc = None;
        }
        if stage < Stage::Assessed {
            self.scorecard = None;
            self.gate = None;
            self.assessment_log = None;
        }
        if stage < Stage::Arranged {
            self.scheme = None;
            self.arrangement_log = None;
        }
        if stage < Stage::Rendered {
            self.renders.clear();
        }
        self.stage = self.stage.min(stage);
    }

    fn bump(&mut self) {
        self.revision += 1;
    }

    pub fn score(&self) -> Option<AbcScore> {
        self.abc.as_deref().and_then(|t| AbcScore::parse(t).ok())
    }

    /// Replaces the rhythm spots. Generation depends on them, so the
    /// project falls back to its last stage before generation.
    pub fn set_spots(&mut self, onsets: Vec<f64>, merge_window: f64) -> Result<(), EditError> {
        let spots = RhythmSpots {
            clip_duration: self.clip.duration,
            onsets,
        };
        spots.validate(merge_window).map_err(|e| {
            EditError::invalid(e.to_string(), vec![Diagnostic::error(e.to_string()).at_path("/onsets")])
        })?;
        self.spots = spots;
        let keep = if self.description.is_some() { Stage::Described } else { Stage::Spotted };
        self.reset_to(keep);
        self.bump();
        Ok(())
    }

    pub fn set_description(&mut self, text: String) -> Result<(), EditError> {
        self.require("editing the description", Stage::Described)?;
        if text.trim().is_empty() {
            return Err(EditError::invalid(
                "description must not be empty",
                vec![Diagnostic::error("description must not be empty").at_path("/description")],
            ));
        }
        self.description = Some(text);
        self.reset_to(Stage::Described);
        self.bump();
        Ok(())
    }

    /// Replaces the score. The melody is re-derived from it and every
    /// later stage is discarded.
    pub fn set_abc(&mut self, text: String) -> Result<(), EditError> {
        self.require("editing the ABC score", Stage::Generated)?;
        let diags = validate_abc(&text);
        if has_errors(&diags) {
            return Err(EditError::invalid("the ABC score has errors", diags));
        }
        let score = AbcScore::parse(&text).map_err(|e| EditError::invalid(e.to_string(), e.diagnostics.clone()))?;
        let song = abc_to_midi(&score).map_err(|e| EditError::invalid(e.to_string(), e.diagnostics.clone()))?;
        self.melody = Some(normalize_song(&song).map_err(|e| EditError::invalid(e, Vec::new()))?);
        self.abc = Some(text);
        self.reset_to(Stage::Generated);
        self.bump();
        Ok(())
    }

    /// Replaces the arrangement scheme after checking it against the
    /// melody. Warnings are returned for display.
    pub fn set_scheme(&mut self, text: &str, registry: &InstrumentRegistry) -> Result<Vec<Diagnostic>, EditError> {
        self.require("editing the scheme", Stage::Arranged)?;
        let scheme = parse_scheme(text, registry).map_err(|d| EditError::invalid("the scheme is invalid", d))?;
        let song = self.melody.as_ref().expect("arranged projects have a melody");
        let diags = validate_scheme(&scheme, song, registry);
        if has_errors(&diags) {
            return Err(EditError::invalid("the scheme does not fit the melody", diags));
        }
        self.scheme = Some(scheme);
        self.reset_to(Stage::Arranged);
        self.bump();
        Ok(diags)
    }

    /// Records a mutation made by a pipeline stage.
    pub fn advance(&mut self, stage: Stage) {
        self.stage = stage;
        self.bump();
    }
}

/// Passes a song through the MIDI writer and parser so the in-memory copy
/// equals what a reload from disk gives.
pub fn normalize_song(song: &MidiSong) -> Result<MidiSong, String> {
    let bytes = write_midi(song).map_err(|e| e.to_string())?;
    parse_midi(&bytes).map_err(|e| e.to_string())
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("no project with id {0}")]
    NotFound(String),
    #[error("{file}: {message}")]
    Corrupt { file: String, message: String },
    #[error(transparent)]
    Io(#[from] IoError),
}

const PROJECT_FILE: &str = "project.json";
const SPOTS_FILE: &str = "spots.json";
const REPORT_FILE: &str = "report.json";
const MELODY_FILE: &str = "melody.mid";
const SCORE_FILE: &str = "score.abc";
const SCHEME_FILE: &str = "scheme.json";
const GENERATED_FILE: &str = "generated.wav";
const ASSESSMENT_LOG: &str = "transcripts/assessment.jsonl";
const ARRANGEMENT_LOG: &str = "transcripts/arrangement.jsonl";
const RENDERS_DIR: &str = "renders";

/// Directory of projects.
pub struct ProjectStore {
    root: PathBuf,
    create_lock: Mutex<()>,
}

fn json_pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("artifact serializes");
    s.push(b'\n');
    s
}

fn remove_if_exists(path: &Path) -> Result<(), IoError> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(fs_err(path)(e)),
        _ => Ok(()),
    }
}

impl ProjectStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ProjectStore {
            root: root.into(),
            create_lock: Mutex::new(()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    fn valid_id(id: &str) -> bool {
        !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    }

    pub fn exists(&self, id: &str) -> bool {
        Self::valid_id(id) && self.dir(id).join(PROJECT_FILE).is_file()
    }

    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let Ok(entries) = fs::read_dir(&self.root) else { return Ok(Vec::new()) };
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| self.exists(id))
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Saves a new project under the next free id `p0001`, `p0002`, ...
    pub fn create(&self, mut project: Project) -> Result<Project, StoreError> {
        let _guard = self.create_lock.lock().unwrap_or_else(|e| e.into_inner());
        let next = self
            .list()?
            .iter()
            .filter_map(|id| id.strip_prefix('p').and_then(|n| n.parse::<u32>().ok()))
            .max()
            .unwrap_or(0)
            + 1;
        project.id = format!("p{next:04}");
        fs::create_dir_all(self.dir(&project.id)).map_err(|e| IoError::Fs {
            path: self.dir(&project.id),
            source: e,
        })?;
        self.save(&project)?;
        Ok(project)
    }

    /// Writes every artifact the project holds and deletes the files of
    /// artifacts it no longer has. `project.json` goes last, so a reader
    /// never sees metadata pointing at files not yet written.
    pub fn save(&self, p: &Project) -> Result<(), StoreError> {
        let dir = self.dir(&p.id);
        write_atomic(&dir.join(SPOTS_FILE), &json_pretty(&p.spots))?;
        let optional: [(&str, Option<Vec<u8>>); 6] = [
            (REPORT_FILE, p.report.as_ref().map(json_pretty)),
            (
                MELODY_FILE,
                match &p.melody {
                    Some(m) => Some(write_midi(m).map_err(|e| StoreError::Corrupt {
                        file: MELODY_FILE.into(),
                        message: e.to_string(),
                    })?),
                    None => None,
                },
            ),
            (SCORE_FILE, p.abc.as_ref().map(|t| t.clone().into_bytes())),
            (SCHEME_FILE, p.scheme.as_ref().map(|s| serialize_scheme(s).into_bytes())),
            (ASSESSMENT_LOG, p.assessment_log.as_ref().map(|t| t.to_jsonl().into_bytes())),
            (ARRANGEMENT_LOG, p.arrangement_log.as_ref().map(|t| t.to_jsonl().into_bytes())),
        ];
        for (name, bytes) in optional {
            let path = dir.join(name);
            match bytes {
                Some(b) => write_atomic(&path, &b)?,
                None => remove_if_exists(&path)?,
            }
        }
        if p.melody.is_none() {
            remove_if_exists(&dir.join(GENERATED_FILE))?;
        }
        let keep: BTreeSet<&str> = p.renders.iter().map(|r| r.path.as_str()).collect();
        if let Ok(entries) = fs::read_dir(dir.join(RENDERS_DIR)) {
            for e in entries.filter_map(|e| e.ok()) {
                let rel = format!("{RENDERS_DIR}/{}", e.file_name().to_string_lossy());
                if !keep.contains(rel.as_str()) {
                    remove_if_exists(&e.path())?;
                }
            }
        }
        write_atomic(&dir.join(PROJECT_FILE), &json_pretty(p))?;
        Ok(())
    }

    pub fn load(&self, id: &str) -> Result<Project, StoreError> {
        if !self.exists(id) {
            return Err(StoreError::NotFound(id.to_string()));
        }
        let dir = self.dir(id);
        let corrupt = |file: &str, message: String| StoreError::Corrupt {
            file: file.to_string(),
            message,
        };
        let read_text = |name: &str| -> Result<Option<String>, StoreError> {
            let path = dir.join(name);
            match fs::read(&path) {
                Ok(b) => String::from_utf8(b).map(Some).map_err(|_| corrupt(name, "not UTF-8".into())),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(e) => Err(IoError::Fs { path, source: e }.into()),
            }
        };
        let meta = read_text(PROJECT_FILE)?.ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        let mut p: Project = serde_json::from_str(&meta).map_err(|e| corrupt(PROJECT_FILE, e.to_string()))?;
        let needs = |file: &'static str, stage: Stage, p: &Project| -> Result<(), StoreError> {
            if p.stage >= stage {
                Err(corrupt(file, format!("missing, but the project is at stage {}", p.stage)))
            } else {
                Ok(())
            }
        };

        let spots = read_text(SPOTS_FILE)?.ok_or_else(|| corrupt(SPOTS_FILE, "missing".into()))?;
        p.spots = serde_json::from_str(&spots).map_err(|e| corrupt(SPOTS_FILE, e.to_string()))?;
        p.spots.validate(0.0).map_err(|e| corrupt(SPOTS_FILE, e.to_string()))?;
        match read_text(REPORT_FILE)? {
            Some(t) => p.report = Some(serde_json::from_str(&t).map_err(|e| corrupt(REPORT_FILE, e.to_string()))?),
            None => needs(REPORT_FILE, Stage::Described, &p)?,
        }
        match fs::read(dir.join(MELODY_FILE)) {
            Ok(b) => p.melody = Some(parse_midi(&b).map_err(|e| corrupt(MELODY_FILE, e.to_string()))?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => needs(MELODY_FILE, Stage::Generated, &p)?,
            Err(e) => {
                return Err(IoError::Fs {
                    path: dir.join(MELODY_FILE),
                    source: e,
                }
                .into())
            }
        }
        match read_text(SCORE_FILE)? {
            Some(t) => {
                if has_errors(&validate_abc(&t)) {
                    return Err(corrupt(SCORE_FILE, "the ABC score has errors".into()));
                }
                p.abc = Some(t);
            }
            None => needs(SCORE_FILE, Stage::Generated, &p)?,
        }
        match read_text(SCHEME_FILE)? {
            Some(t) => {
                let scheme: ArrangementScheme =
                    serde_json::from_str(&t).map_err(|e| corrupt(SCHEME_FILE, e.to_string()))?;
                p.scheme = Some(scheme);
            }
            None => needs(SCHEME_FILE, Stage::Arranged, &p)?,
        }
        if let Some(t) = read_text(ASSESSMENT_LOG)? {
            p.assessment_log = Some(ChatTranscript::from_jsonl(&t).map_err(|e| corrupt(ASSESSMENT_LOG, e.to_string()))?);
        }
        if let Some(t) = read_text(ARRANGEMENT_LOG)? {
            p.arrangement_log = Some(ChatTranscript::from_jsonl(&t).map_err(|e| corrupt(ARRANGEMENT_LOG, e.to_string()))?);
        }
        for r in &p.renders {
            if !dir.join(&r.path).is_file() {
                return Err(corrupt(&r.path, "render listed in project.json is missing".into()));
            }
        }
        Ok(p)
    }

    /// Stores a render's WAV bytes and returns the reference to record.
    pub fn write_render(&self, id: &str, revision: u64, wav: &[u8]) -> Result<RenderRef, StoreError> {
        let rel = format!("{RENDERS_DIR}/rev{revision:06}.wav");
        write_atomic(&self.dir(id).join(&rel), wav)?;
        Ok(RenderRef { revision, path: rel })
    }

    pub fn write_generated(&self, id: &str, wav: &[u8]) -> Result<(), StoreError> {
        Ok(write_atomic(&self.dir(id).join(GENERATED_FILE), wav)?)
    }

    pub fn generated_path(&self, id: &str) -> PathBuf {
        self.dir(id).join(GENERATED_FILE)
    }

    pub fn render_path(&self, id: &str, r: &RenderRef) -> PathBuf {
        self.dir(id).join(&r.path)
    }
}
