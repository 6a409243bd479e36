use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cuekit::config::PipelineConfig;
use cuekit::demo::{demo_config, run_demo};
use cuekit::io::{load_frames, read_flow, read_wav, write_atomic};
use cuekit::pipeline::{Engine, Outputs, PipelineError};
use cuekit::project::{ClipRef, Project, StoreError};
use cuekit_core::metrics::MetricsRow;
use cuekit_core::notation::parse_midi;
use cuekit_core::vision::VisualReport;
use serde_json::{json, Value};

/// Score a film clip: spot a rhythm, describe the picture, generate and
/// assess a melody, arrange it and render the mix.
#[derive(Parser)]
#[command(name = "cuekit", version)]
struct Cli {
    /// TOML settings file.
    #[arg(long, global = true, env = "CUEKIT_CONFIG")]
    config: Option<PathBuf>,
    /// Project directory root, overriding the settings file.
    #[arg(long, global = true)]
    projects: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a project from a reference MIDI file or hand-placed spots.
    Spot {
        #[arg(long, default_value = "")]
        name: String,
        /// Reference song whose main melody gives the rhythm.
        #[arg(long, conflicts_with = "onsets")]
        midi: Option<PathBuf>,
        /// Comma-separated onset times in seconds.
        #[arg(long, value_delimiter = ',', required_unless_present = "midi")]
        onsets: Option<Vec<f64>>,
        /// Clip length in seconds; defaults to the reference song's length.
        #[arg(long, required_unless_present = "midi")]
        duration: Option<f64>,
        #[arg(long)]
        frame_rate: Option<f64>,
    },
    /// Attach the visual report and derive the music description.
    Describe {
        project: String,
        /// JSON visual report with the seven label categories.
        #[arg(long)]
        report: PathBuf,
        /// Frame directory (PGM/PPM files) or raw frame stream.
        #[arg(long)]
        frames: Option<PathBuf>,
        /// Precomputed optical-flow magnitudes, one per line.
        #[arg(long)]
        flow: Option<PathBuf>,
        #[arg(long, default_value_t = 24.0)]
        fps: f64,
        /// Extra words appended to the description.
        #[arg(long)]
        hints: Option<String>,
    },
    /// Generate a melody from the spots and description.
    Generate { project: String },
    /// Score the melody and regenerate while it misses the gate.
    Assess { project: String },
    /// Have the arrangement agents write the scheme.
    Arrange { project: String },
    /// Render the scheme to a 48 kHz, 24-bit stereo WAV.
    Render { project: String },
    /// Compare the latest render with a reference recording.
    Evaluate {
        project: String,
        #[arg(long)]
        against: PathBuf,
        /// Reference MIDI for the instrumentation distance.
        #[arg(long)]
        reference_midi: Option<PathBuf>,
        /// Further renders; diversity is computed over the set with the
        /// project's own render.
        #[arg(long, num_args = 1..)]
        set: Vec<PathBuf>,
        /// Report file; defaults to evaluation.<format> in the project.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// Run every stage on the bundled fixtures with the offline backends.
    Demo {
        /// Working directory for fixtures and the project.
        #[arg(long, default_value = "cuekit-demo")]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// A failure with the exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match e {
            PipelineError::Stage(_) => 2,
            PipelineError::Backend(_) => 3,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        PipelineError::from(e).into()
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut c = PipelineConfig::load(cli.config.as_deref()).map_err(|e| Failure::usage(e.to_string()))?;
    if let Some(p) = &cli.projects {
        c.projects_dir = p.clone();
    }
    Ok(c)
}

fn summary(p: &Project) -> Value {
    json!({
        "project": p.id,
        "name": p.name,
        "stage": p.stage,
        "revision": p.revision,
        "spots": p.spots.onsets.len(),
        "description": p.description,
        "musicality": p.scorecard.as_ref().map(|c| c.total),
        "gate": p.gate,
        "renders": p.renders,
    })
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<Value, Failure> {
    if let Command::Demo { out, threads } = &cli.command {
        let mut config = match &cli.config {
            Some(_) => load_config(&cli)?,
            None => demo_config(out),
        };
        config.projects_dir = cli.projects.clone().unwrap_or_else(|| out.join("projects"));
        if let Some(t) = threads {
            config.render_threads = *t;
        }
        let s = run_demo(out, config)?;
        return Ok(serde_json::to_value(s).unwrap_or_default());
    }

    let config = load_config(&cli)?;
    if let Command::Serve { bind } = &cli.command {
        let bind = bind.clone().unwrap_or_else(|| config.bind.clone());
        let engine = Engine::new(config)?;
        let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::usage(e.to_string()))?;
        rt.block_on(cuekit::api::serve(engine, &bind))
            .map_err(|e| Failure::usage(format!("cannot serve on {bind}: {e}")))?;
        return Ok(json!({"served": bind}));
    }

    let engine = Engine::new(config)?;
    let stage = |id: &str, f: fn(&Engine, &mut Project) -> Result<Outputs, PipelineError>| -> Result<Value, Failure> {
        let mut p = engine.store.load(id)?;
        let out = f(&engine, &mut p)?;
        engine.commit(&p, out)?;
        Ok(summary(&p))
    };
    match cli.command {
        Command::Spot {
            name,
            midi,
            onsets,
            duration,
            frame_rate,
        } => {
            let p = match (midi, onsets) {
                (Some(path), _) => {
                    let song = parse_midi(&read(&path)?).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
                    let clip = ClipRef {
                        source: None,
                        duration: duration.unwrap_or(song.duration),
                        frame_rate,
                    };
                    engine.spot_from_song(&name, &song, clip)?
                }
                (None, Some(onsets)) => {
                    let clip = ClipRef {
                        source: None,
                        duration: duration.ok_or_else(|| Failure::usage("--duration is required with --onsets"))?,
                        frame_rate,
                    };
                    engine.create_with_spots(&name, onsets, clip)?
                }
                (None, None) => return Err(Failure::usage("give --midi or --onsets")),
            };
            Ok(summary(&p))
        }
        Command::Describe {
            project,
            report,
            frames,
            flow,
            fps,
            hints,
        } => {
            let mut p = engine.store.load(&project)?;
            let text = read(&report)?;
            let report: VisualReport =
                serde_json::from_slice(&text).map_err(|e| Failure::usage(format!("{}: {e}", report.display())))?;
            let frames = frames
                .as_deref()
                .map(|f| load_frames(f, fps))
                .transpose()
                .map_err(|e| Failure::usage(e.to_string()))?;
            let flow = flow.as_deref().map(read_flow).transpose().map_err(|e| Failure::usage(e.to_string()))?;
            let out = engine.describe(&mut p, report, frames.as_ref(), flow, hints)?;
            engine.commit(&p, out)?;
            Ok(summary(&p))
        }
        Command::Generate { project } => stage(&project, Engine::generate),
        Command::Assess { project } => stage(&project, Engine::assess),
        Command::Arrange { project } => stage(&project, Engine::arrange),
        Command::Render { project } => stage(&project, Engine::render),
        Command::Evaluate {
            project,
            against,
            reference_midi,
            set,
            out,
            format,
        } => {
            let p = engine.store.load(&project)?;
            p.require("evaluate", cuekit::project::Stage::Rendered)
                .map_err(PipelineError::from)?;
            let latest = p.renders.last().ok_or_else(|| Failure::usage("the project has no render"))?;
            let wav = |path: &Path| read_wav(path).map_err(|e| Failure::usage(e.to_string()));
            let rendered = wav(&engine.store.render_path(&p.id, latest))?;
            let reference = wav(&against)?;
            let reference_song = match reference_midi {
                Some(path) => Some(parse_midi(&read(&path)?).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?),
                None => None,
            };
            let mut pieces = vec![rendered.clone()];
            for s in &set {
                pieces.push(wav(s)?);
            }
            let row = engine.evaluate(&p, &rendered, &reference, reference_song.as_ref(), &pieces)?;
            let path = out.unwrap_or_else(|| {
                engine.store.dir(&p.id).join(match format {
                    Format::Csv => "evaluation.csv",
                    Format::Json => "evaluation.json",
                })
            });
            write_atomic(&path, &report_bytes(&row, format)?).map_err(|e| Failure::usage(e.to_string()))?;
            Ok(json!({"project": p.id, "report": path, "metrics": row}))
        }
        Command::Serve { .. } | Command::Demo { .. } => unreachable!("handled above"),
    }
}

fn report_bytes(row: &MetricsRow, format: Format) -> Result<Vec<u8>, Failure> {
    match format {
        Format::Json => serde_json::to_vec_pretty(&[row]).map_err(|e| Failure::usage(e.to_string())),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.serialize(row).map_err(|e| Failure::usage(e.to_string()))?;
            w.into_inner().map_err(|e| Failure::usage(e.to_string()))
        }
    }
}
