//! The stages of a project, from spotting to rendering, run against the
//! configured backends.

use cuekit_core::agents::{
    assessment_agents, arrangement_agents, compose_with_gate, run_arrangement, run_assessment, AgentError,
    AgentErrorKind, ArrangeOptions, ChatTranscript, LogicalClock,
};
use cuekit_core::audio::{encode_wav, Waveform};
use cuekit_core::conditioning::{
    assemble_condition, chromagram, downsample_chroma, synthesize_click_track, GeneratorBackend,
};
use cuekit_core::diag::has_errors;
use cuekit_core::melody::{spot, RhythmSpots};
use cuekit_core::metrics::{
    chroma_diversity, db_envelope, detect_onsets, dynamic_variation_distance,
    instrumentation_distance, rhythm_xcorr, InstrumentDistribution, MetricsRow,
};
use cuekit_core::notation::{abc_to_midi, midi_to_abc, AbcOptions, MidiSong};
use cuekit_core::render::{finish_render, prepare_render, RenderError, RenderOutput, TrackJob};
use cuekit_core::scheme::{scheme_distribution, ArrangementScheme, InstrumentRegistry};
use cuekit_core::transcribe::{MonophonicTranscriber, Transcriber};
use cuekit_core::vision::{
    build_description, detect_shot_cuts, motion_saliency, motion_speed, optical_flow_magnitudes,
    validate_visual_report, FlowParams, FlowSeries, FrameSequence, VisualReport, Vocabulary,
};
use rayon::prelude::*;

use crate::backends::{build_generator, build_llm};
use crate::config::PipelineConfig;
use crate::project::{normalize_song, ClipRef, GateRecord, Project, ProjectStore, RenderRef, Stage, StageError, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("backend failed: {0}")]
    Backend(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot load {0}")]
    Setup(String),
}

impl From<AgentError> for PipelineError {
    fn from(e: AgentError) -> Self {
        match e.kind {
            AgentErrorKind::InvalidInput(m) => PipelineError::Invalid(m),
            _ => PipelineError::Backend(e.to_string()),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Invalid(e.to_string())
}

/// Files a stage produced besides the project's own artifacts.
#[derive(Debug, Default)]
pub struct Outputs {
    pub generated_wav: Option<Vec<u8>>,
    pub render_wav: Option<Vec<u8>>,
}

/// A generated melody: the audio, its transcription and score.
pub struct Candidate {
    pub audio: Waveform,
    pub melody: MidiSong,
    pub abc: String,
}

/// Configured backends and assets. Stages take a project, change it in
/// memory and return the extra files to write; [`Engine::commit`]
/// persists both.
pub struct Engine {
    pub config: PipelineConfig,
    pub registry: InstrumentRegistry,
    pub vocabulary: Vocabulary,
    pub generator: Box<dyn GeneratorBackend>,
    pub llm: Box<dyn cuekit_core::agents::LlmBackend>,
    pub transcriber: Box<dyn Transcriber>,
    pub store: ProjectStore,
}

impl Engine {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        let registry = match &config.registry {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| PipelineError::Setup(format!("{}: {e}", p.display())))?;
                InstrumentRegistry::from_json(&text).map_err(|e| PipelineError::Setup(format!("{}: {e}", p.display())))?
            }
            None => InstrumentRegistry::bundled(),
        };
        let vocabulary = match &config.vocabulary {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| PipelineError::Setup(format!("{}: {e}", p.display())))?;
                Vocabulary::from_json(&text).map_err(|e| PipelineError::Setup(format!("{}: {e}", p.display())))?
            }
            None => Vocabulary::bundled(),
        };
        Ok(Engine {
            generator: build_generator(&config.generator),
            llm: build_llm(&config.llm, &registry),
            transcriber: Box::new(MonophonicTranscriber::default()),
            store: ProjectStore::new(config.projects_dir.clone()),
            registry,
            vocabulary,
            config,
        })
    }

    /// Writes stage outputs, then the project itself.
    pub fn commit(&self, project: &Project, outputs: Outputs) -> Result<(), StoreError> {
        if let Some(wav) = outputs.generated_wav {
            self.store.write_generated(&project.id, &wav)?;
        }
        if let (Some(wav), Some(r)) = (outputs.render_wav, project.renders.last()) {
            self.store.write_render(&project.id, r.revision, &wav)?;
        }
        self.store.save(project)
    }

    /// New project whose spots come from a reference song's main melody.
    pub fn spot_from_song(&self, name: &str, song: &MidiSong, clip: ClipRef) -> Result<Project, PipelineError> {
        let spotting = spot(song, Some(clip.duration), &self.config.spotting).map_err(invalid)?;
        let p = Project::new(String::new(), name.to_string(), clip, spotting.spots);
        Ok(self.store.create(p)?)
    }

    /// New project from hand-placed spots.
    pub fn create_with_spots(&self, name: &str, onsets: Vec<f64>, clip: ClipRef) -> Result<Project, PipelineError> {
        let spots = RhythmSpots {
            clip_duration: clip.duration,
            onsets,
        };
        spots.validate(self.config.spotting.merge_window).map_err(invalid)?;
        Ok(self.store.create(Project::new(String::new(), name.to_string(), clip, spots))?)
    }

    /// Fills the motion fields from frames (or precomputed flow) and
    /// renders the prompt text.
    pub fn describe(
        &self,
        p: &mut Project,
        mut report: VisualReport,
        frames: Option<&FrameSequence>,
        flow: Option<FlowSeries>,
        hints: Option<String>,
    ) -> Result<Outputs, PipelineError> {
        let flow = match (flow, frames) {
            (Some(f), _) => Some(f),
            (None, Some(fr)) => Some(optical_flow_magnitudes(fr, FlowParams::default())),
            (None, None) => None,
        };
        if let Some(flow) = &flow {
            let n = flow.magnitudes.len();
            if n >= 1 {
                report.motion_speed = motion_speed(flow, 0..n).map_err(invalid)?;
            }
            if n >= 2 {
                report.motion_saliency = motion_saliency(flow, 0..n).map_err(invalid)?;
            }
        }
        if let Some(fr) = frames {
            report.shot_cuts = detect_shot_cuts(fr);
        }
        let diags = validate_visual_report(&report, &self.vocabulary);
        if has_errors(&diags) {
            let first = diags.iter().find(|d| d.is_error()).map(|d| d.to_string()).unwrap_or_default();
            return Err(PipelineError::Invalid(format!("visual report: {first}")));
        }
        let description = build_description(&report, &self.vocabulary, hints.as_deref()).map_err(invalid)?;
        if description.trim().is_empty() {
            return Err(invalid("the visual report yields an empty description; give at least one label or a hint"));
        }
        p.reset_to(Stage::Spotted);
        p.report = Some(report);
        p.description = Some(description);
        p.music_hints = hints;
        p.advance(Stage::Described);
        Ok(Outputs::default())
    }

    /// Generates, transcribes and notates one melody.
    pub fn candidate(&self, p: &Project, seed: u64) -> Result<Candidate, PipelineError> {
        let c = &self.config.chroma;
        let description = p.description.as_deref().ok_or_else(|| invalid("no description"))?;
        let click = synthesize_click_track(&p.spots, c.sample_rate).map_err(invalid)?;
        let chroma = chromagram(&click, c.window, c.hop, true).map_err(invalid)?;
        let chroma = downsample_chroma(&chroma, c.downsample).map_err(invalid)?;
        let bundle = assemble_condition(chroma, description).map_err(invalid)?;
        let duration = p.clip.duration.min(self.generator.capabilities().max_duration);
        let audio = self
            .generator
            .generate(&bundle, duration, seed)
            .map_err(|e| PipelineError::Backend(e.to_string()))?;
        let song = self
            .transcriber
            .transcribe(&audio)
            .map_err(|e| PipelineError::Backend(format!("transcription: {e}")))?;
        let opts = AbcOptions {
            title: if p.name.is_empty() { "Untitled".into() } else { p.name.clone() },
            ..AbcOptions::default()
        };
        let conv = midi_to_abc(&song, &opts).map_err(invalid)?;
        // the stored melody is the score's reading, so the two never disagree
        let melody = normalize_song(&abc_to_midi(&conv.score).map_err(invalid)?).map_err(invalid)?;
        Ok(Candidate {
            audio,
            melody,
            abc: conv.score.text,
        })
    }

    fn seed(&self, attempt: u32) -> u64 {
        self.config.generator.seed.wrapping_add(attempt as u64 - 1)
    }

    pub fn generate(&self, p: &mut Project) -> Result<Outputs, PipelineError> {
        p.require("generate", Stage::Described)?;
        let c = self.candidate(p, self.seed(1))?;
        let wav = encode_wav(&c.audio, 16).map_err(invalid)?;
        p.reset_to(Stage::Described);
        p.melody = Some(c.melody);
        p.abc = Some(c.abc);
        p.advance(Stage::Generated);
        Ok(Outputs {
            generated_wav: Some(wav),
            ..Outputs::default()
        })
    }

    /// Scores the current melody and, while it falls short of the gate,
    /// generates replacements with the following seeds. The best
    /// candidate seen is kept either way.
    pub fn assess(&self, p: &mut Project) -> Result<Outputs, PipelineError> {
        p.require("assess", Stage::Generated)?;
        let agents = assessment_agents();
        let clock = LogicalClock::default();
        let mut log = ChatTranscript::default();
        let g = &self.config.gate;
        let current = (p.melody.clone(), p.abc.clone());
        let outcome = compose_with_gate(g.threshold, g.max_attempts, |attempt| {
            let (cand, wav) = if attempt == 1 {
                (None, None)
            } else {
                let c = self.candidate(p, self.seed(attempt))?;
                let wav = encode_wav(&c.audio, 16).map_err(invalid)?;
                (Some(c), Some(wav))
            };
            let text = match &cand {
                Some(c) => c.abc.clone(),
                None => current.1.clone().ok_or_else(|| invalid("no score"))?,
            };
            let score = cuekit_core::notation::AbcScore::parse(&text).map_err(invalid)?;
            let (card, t) = run_assessment(&score, self.llm.as_ref(), &agents, &clock)?;
            log.append(t);
            Ok::<_, PipelineError>(((attempt, cand, wav), card))
        })?;
        let (attempt, cand, wav) = outcome.candidate;
        p.reset_to(Stage::Generated);
        if let Some(c) = cand {
            p.melody = Some(c.melody);
            p.abc = Some(c.abc);
        }
        p.scorecard = Some(outcome.card);
        p.gate = Some(GateRecord {
            attempts: outcome.attempts,
            decision: outcome.decision,
            flagged: outcome.flagged,
            totals: outcome.totals,
            seed: self.seed(attempt),
        });
        p.assessment_log = Some(log);
        p.advance(Stage::Assessed);
        Ok(Outputs {
            generated_wav: wav,
            ..Outputs::default()
        })
    }

    pub fn arrange(&self, p: &mut Project) -> Result<Outputs, PipelineError> {
        p.require("arrange", Stage::Assessed)?;
        let score = p.score().ok_or_else(|| invalid("the stored score does not parse"))?;
        let report = p.report.as_ref().ok_or_else(|| invalid("no visual report"))?;
        let agents = arrangement_agents();
        let clock = LogicalClock::default();
        let opts = ArrangeOptions {
            agents: &agents,
            registry: &self.registry,
            vocabulary: &self.vocabulary,
            clock: &clock,
            revision_rounds: self.config.gate.revision_rounds,
        };
        let (scheme, log) = run_arrangement(&score, report, self.llm.as_ref(), &opts)?;
        p.reset_to(Stage::Assessed);
        p.scheme = Some(scheme);
        p.arrangement_log = Some(log);
        p.advance(Stage::Arranged);
        Ok(Outputs::default())
    }

    pub fn render(&self, p: &mut Project) -> Result<Outputs, PipelineError> {
        p.require("render", Stage::Arranged)?;
        let song = p.melody.as_ref().ok_or_else(|| invalid("no melody"))?;
        let scheme = p.scheme.as_ref().ok_or_else(|| invalid("no scheme"))?;
        let out = render_parallel(song, scheme, &self.registry, &self.config.render, self.config.render_threads)
            .map_err(invalid)?;
        let wav = out.to_wav().map_err(invalid)?;
        p.reset_to(Stage::Arranged);
        p.advance(Stage::Rendered);
        p.renders.push(RenderRef {
            revision: p.revision,
            path: format!("renders/rev{:06}.wav", p.revision),
        });
        Ok(Outputs {
            render_wav: Some(wav),
            ..Outputs::default()
        })
    }

    /// Objective metrics of the latest render against a reference
    /// recording. Diversity needs a set of at least two pieces.
    pub fn evaluate(
        &self,
        p: &Project,
        rendered: &Waveform,
        reference: &Waveform,
        reference_song: Option<&MidiSong>,
        set: &[Waveform],
    ) -> Result<MetricsRow, PipelineError> {
        let ours = detect_onsets(rendered);
        let theirs = detect_onsets(reference);
        let x = rhythm_xcorr(&theirs, &ours, 0.05).map_err(invalid)?;
        let dynamic = dynamic_variation_distance(&db_envelope(reference), &db_envelope(rendered)).ok();
        let instr = match (reference_song, p.melody.as_ref(), p.scheme.as_ref()) {
            (Some(r), Some(m), Some(s)) => {
                let family = |i: usize| self.registry.by_program(r.tracks[i].program).map(|e| e.family.clone());
                let a = InstrumentDistribution::from_song(r, family).map_err(invalid)?;
                let b = scheme_distribution(m, s, &self.registry).map_err(invalid)?;
                Some(instrumentation_distance(&a, &b).map_err(invalid)?)
            }
            _ => None,
        };
        let diversity = if set.len() >= 2 {
            let c = &self.config.chroma;
            let chromas = set
                .iter()
                .map(|w| chromagram(w, c.window, c.hop, false))
                .collect::<Result<Vec<_>, _>>()
                .map_err(invalid)?;
            Some(chroma_diversity(&chromas).map_err(invalid)?)
        } else {
            None
        };
        Ok(MetricsRow {
            name: p.id.clone(),
            diversity,
            rhythm_raw: Some(x.peak),
            rhythm_norm: Some(x.normalized),
            rhythm_lag: Some(x.lag),
            dynamic_dist: dynamic,
            instr_dist: instr,
            ..MetricsRow::default()
        })
    }
}

/// Renders tracks on a rayon pool and mixes them in plan order, so the
/// result does not depend on the thread count.
pub fn render_parallel(
    song: &MidiSong,
    scheme: &ArrangementScheme,
    registry: &InstrumentRegistry,
    cfg: &cuekit_core::render::RenderConfig,
    threads: usize,
) -> Result<RenderOutput, RenderError> {
    let jobs = prepare_render(song, scheme, registry, cfg)?;
    let run = || jobs.par_iter().map(TrackJob::run).collect::<Result<Vec<_>, _>>();
    let results = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(run)?,
        Err(_) => run()?,
    };
    finish_render(results, song, scheme, cfg)
}
