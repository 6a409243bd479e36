//! File formats: WAV decoding, frame sources, atomic writes.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use cuekit_core::audio::{AudioError, Waveform};
use cuekit_core::vision::{decode_netpbm, decode_raw_stream, FlowSeries, FrameSequence, VisionError};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs { path: PathBuf, source: std::io::Error },
    #[error("{path}: not a readable WAV file: {message}")]
    Wav { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Audio { path: PathBuf, source: AudioError },
    #[error("{path}: {source}")]
    Vision { path: PathBuf, source: VisionError },
}

pub fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs {
        path: path.to_path_buf(),
        source,
    }
}

/// Decodes 8/16/24/32-bit integer or 32-bit float PCM into a waveform.
/// Out-of-range float samples are clamped.
pub fn decode_wav(bytes: &[u8], origin: &Path) -> Result<Waveform, IoError> {
    let wav_err = |e: hound::Error| IoError::Wav {
        path: origin.to_path_buf(),
        message: e.to_string(),
    };
    let mut reader = hound::WavReader::new(Cursor::new(bytes)).map_err(wav_err)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().collect::<Result<_, _>>().map_err(wav_err)?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<Result<_, _>>()
                .map_err(wav_err)?
        }
    };
    if channels == 0 {
        return Err(IoError::Audio {
            path: origin.to_path_buf(),
            source: AudioError::BadChannelCount(0),
        });
    }
    let mut planar = vec![Vec::with_capacity(interleaved.len() / channels); channels];
    for (i, s) in interleaved.into_iter().enumerate() {
        planar[i % channels].push(s.clamp(-1.0, 1.0));
    }
    Waveform::new(spec.sample_rate, planar).map_err(|source| IoError::Audio {
        path: origin.to_path_buf(),
        source,
    })
}

pub fn read_wav(path: &Path) -> Result<Waveform, IoError> {
    let bytes = fs::read(path).map_err(fs_err(path))?;
    decode_wav(&bytes, path)
}

/// Loads frames from a directory of PGM/PPM files (in file-name order) or
/// from a raw planar stream file, which carries its own frame rate.
pub fn load_frames(source: &Path, frame_rate: f64) -> Result<FrameSequence, IoError> {
    let vision = |source_err: VisionError| IoError::Vision {
        path: source.to_path_buf(),
        source: source_err,
    };
    if source.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(source)
            .map_err(fs_err(source))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm"))
            })
            .collect();
        files.sort();
        let mut images = Vec::with_capacity(files.len());
        for f in &files {
            let bytes = fs::read(f).map_err(fs_err(f))?;
            images.push(decode_netpbm(&bytes).map_err(|source| IoError::Vision {
                path: f.clone(),
                source,
            })?);
        }
        FrameSequence::from_images(images, frame_rate).map_err(vision)
    } else {
        let bytes = fs::read(source).map_err(fs_err(source))?;
        decode_raw_stream(&bytes).map_err(vision)
    }
}

pub fn read_flow(path: &Path) -> Result<FlowSeries, IoError> {
    let text = fs::read_to_string(path).map_err(fs_err(path))?;
    FlowSeries::from_text(&text).map_err(|source| IoError::Vision {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes through a temporary sibling and renames, so readers never see
/// a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(fs_err(dir))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(fs_err(&tmp))?;
    fs::rename(&tmp, path).map_err(fs_err(path))
}
