use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::Waveform;
use crate::dsp::fft::Stft;
use crate::dsp::math::{log2, round, sqrt};

pub const DEFAULT_CHROMA_WINDOW: usize = 4096;
pub const DEFAULT_CHROMA_HOP: usize = 2048;
pub const PITCH_CLASS_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

const LOWEST_HZ: f64 = 27.5;
/// Frames quieter than this mean-square count as silence in one-hot mode.
const SILENCE_MEAN_SQUARE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChromaError {
    #[error("window must be a power of two of at least 256, got {0}")]
    BadWindow(usize),
    #[error("hop must be between 1 and the window length, got {0}")]
    BadHop(usize),
    #[error("downsampling factor must be at least 1")]
    BadFactor,
    #[error("chromagram shape is inconsistent: {0}")]
    Shape(&'static str),
}

/// Twelve pitch-class energies per frame, index 0 = C.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chromagram {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub one_hot: bool,
    pub frames: Vec<[f64; 12]>,
    pub mask: Vec<bool>,
}

impl Chromagram {
    /// Checks the structural invariants, e.g. after loading a precomputed file.
    pub fn validate(&self) -> Result<(), ChromaError> {
        if self.hop == 0 || self.window == 0 {
            return Err(ChromaError::Shape("hop and window must be positive"));
        }
        if self.mask.len() != self.frames.len() {
            return Err(ChromaError::Shape("mask length differs from frame count"));
        }
        if self.frames.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ChromaError::Shape("energies must be finite and non-negative"));
        }
        if self.one_hot {
            for (f, &valid) in self.frames.iter().zip(&self.mask) {
                let ones = f.iter().filter(|v| **v == 1.0).count();
                let zeros = f.iter().filter(|v| **v == 0.0).count();
                if ones + zeros != 12 || ones > 1 || (valid && ones != 1) {
                    return Err(ChromaError::Shape("one-hot frame is not one-hot"));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Start time of frame `k` in seconds.
    pub fn frame_time(&self, k: usize) -> f64 {
        (k * self.hop) as f64 / self.sample_rate as f64
    }

    /// Loads a precomputed chromagram. Accepts either the full object form
    /// produced by serialization or a bare matrix of 12-element rows; a bare
    /// matrix is one-hot when every row is, and its all-zero one-hot rows
    /// are masked out.
    pub fn from_json(text: &str, sample_rate: u32, window: usize, hop: usize) -> Result<Self, ChromaError> {
        if let Ok(full) = serde_json::from_str::<Chromagram>(text) {
            full.validate()?;
            return Ok(full);
        }
        let frames: Vec<[f64; 12]> =
            serde_json::from_str(text).map_err(|_| ChromaError::Shape("expected a chromagram object or a matrix of 12-bin rows"))?;
        let one_hot = !frames.is_empty()
            && frames.iter().all(|f| {
                f.iter().all(|v| *v == 0.0 || *v == 1.0) && f.iter().filter(|v| **v == 1.0).count() <= 1
            });
        let mask = frames.iter().map(|f| !one_hot || f.contains(&1.0)).collect();
        let c = Chromagram {
            sample_rate,
            window,
            hop,
            one_hot,
            frames,
            mask,
        };
        c.validate()?;
        Ok(c)
    }

    /// Index of the largest bin; ties go to the lower pitch class.
    pub fn argmax(frame: &[f64; 12]) -> usize {
        let mut best = 0;
        for i in 1..12 {
            if frame[i] > frame[best] {
                best = i;
            }
        }
        best
    }
}

/// Pitch class (0 = C) of a frequency, A4 = 440 Hz.
pub fn pitch_class_of(hz: f64) -> usize {
    (round(12.0 * log2(hz / 440.0)) as i64 + 9).rem_euclid(12) as usize
}

fn one_hot_of(frame: &[f64; 12]) -> [f64; 12] {
    let mut out = [0.0; 12];
    out[Chromagram::argmax(frame)] = 1.0;
    out
}

/// Short-time chroma with a periodic Hann window. Frame `k` starts at
/// `k * hop`; there are `ceil(len / hop)` frames and only those lying
/// wholly inside the signal are valid. A signal shorter than one window
/// yields a single zero-padded frame, marked valid.
pub fn chromagram(audio: &Waveform, window: usize, hop: usize, one_hot: bool) -> Result<Chromagram, ChromaError> {
    if window < 256 || !window.is_power_of_two() {
        return Err(ChromaError::BadWindow(window));
    }
    if hop == 0 || hop > window {
        return Err(ChromaError::BadHop(hop));
    }
    let signal = audio.to_mono();
    let sr = audio.sample_rate as f64;
    let bin_pc: Vec<Option<usize>> = (0..=window / 2)
        .map(|k| {
            let hz = k as f64 * sr / window as f64;
            (hz >= LOWEST_HZ).then(|| pitch_class_of(hz))
        })
        .collect();

    let short = signal.len() < window;
    let n_frames = if short { 1 } else { signal.len().div_ceil(hop) };
    let mut stft = Stft::hann(window);
    let mut mags = Vec::with_capacity(window / 2 + 1);
    let mut frames = Vec::with_capacity(n_frames);
    let mut mask = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let start = k * hop;
        let end = (start + window).min(signal.len());
        let chunk = &signal[start.min(end)..end];
        let mut valid = short || start + window <= signal.len();
        stft.magnitudes(chunk, &mut mags);
        let mut energy = [0.0f64; 12];
        for (m, pc) in mags.iter().zip(&bin_pc) {
            if let Some(pc) = pc {
                energy[*pc] += m * m;
            }
        }
        let frame = if one_hot {
            let ms = chunk.iter().map(|x| x * x).sum::<f64>() / window as f64;
            if ms < SILENCE_MEAN_SQUARE || energy.iter().all(|e| *e == 0.0) {
                valid = false;
                [0.0; 12]
            } else {
                one_hot_of(&energy)
            }
        } else {
            let norm = sqrt(energy.iter().map(|e| e * e).sum());
            if norm > 0.0 {
                energy.map(|e| e / norm)
            } else {
                energy
            }
        };
        frames.push(frame);
        mask.push(valid);
    }
    Ok(Chromagram {
        sample_rate: audio.sample_rate,
        window,
        hop,
        one_hot,
        frames,
        mask,
    })
}

/// Averages blocks of `factor` frames; a block is valid only if all its
/// frames are. One-hot input is re-binarized by argmax.
pub fn downsample_chroma(chroma: &Chromagram, factor: usize) -> Result<Chromagram, ChromaError> {
    if factor == 0 {
        return Err(ChromaError::BadFactor);
    }
    if factor == 1 {
        return Ok(chroma.clone());
    }
    let mut frames = Vec::with_capacity(chroma.len().div_ceil(factor));
    let mut mask = Vec::with_capacity(frames.capacity());
    for (block, valid) in chroma.frames.chunks(factor).zip(chroma.mask.chunks(factor)) {
        let mut mean = [0.0; 12];
        for f in block {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= block.len() as f64);
        let all_valid = valid.iter().all(|v| *v);
        let frame = if chroma.one_hot {
            if mean.iter().all(|m| *m == 0.0) {
                mean
            } else {
                one_hot_of(&mean)
            }
        } else {
            mean
        };
        frames.push(frame);
        mask.push(all_valid);
    }
    Ok(Chromagram {
        sample_rate: chroma.sample_rate,
        window: chroma.window,
        hop: chroma.hop * factor,
        one_hot: chroma.one_hot,
        frames,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::math::sin;
    use alloc::vec;

    fn sine(hz: f64, seconds: f64, sr: u32) -> Waveform {
        let n = (seconds * sr as f64) as usize;
        let s = (0..n)
            .map(|i| (0.5 * sin(2.0 * core::f64::consts::PI * hz * i as f64 / sr as f64)) as f32)
            .collect();
        Waveform::mono(sr, s).unwrap()
    }

    #[test]
    fn a440_is_pitch_class_a() {
        let c = chromagram(&sine(440.0, 1.0, 32_000), 4096, 2048, true).unwrap();
        assert_eq!(c.len(), 16);
        for (f, v) in c.frames.iter().zip(&c.mask) {
            if *v {
                assert_eq!(Chromagram::argmax(f), 9);
            }
        }
        assert_eq!(c.mask.iter().filter(|v| **v).count(), 14);
        c.validate().unwrap();
    }

    #[test]
    fn silence_masks_one_hot_frames() {
        let c = chromagram(&Waveform::silent(32_000, 1, 16_000).unwrap(), 4096, 2048, true).unwrap();
        assert!(c.mask.iter().all(|v| !*v));
        assert!(c.frames.iter().all(|f| f.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn short_audio_gives_one_padded_frame() {
        let c = chromagram(&sine(523.25, 0.05, 32_000), 4096, 2048, false).unwrap();
        assert_eq!((c.len(), c.mask.clone()), (1, vec![true]));
        assert_eq!(Chromagram::argmax(&c.frames[0]), 0);
    }

    #[test]
    fn downsample_ceil_rule() {
        let c = Chromagram {
            sample_rate: 32_000,
            window: 4096,
            hop: 2048,
            one_hot: false,
            frames: vec![[1.0; 12]; 10],
            mask: vec![true; 10],
        };
        let d = downsample_chroma(&c, 3).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.hop, 6144);
        assert_eq!(downsample_chroma(&c, 1).unwrap(), c);
        assert!(downsample_chroma(&c, 0).is_err());
    }

    #[test]
    fn parameter_checks() {
        let w = sine(440.0, 0.2, 32_000);
        assert_eq!(chromagram(&w, 1000, 100, false), Err(ChromaError::BadWindow(1000)));
        assert_eq!(chromagram(&w, 1024, 2048, false), Err(ChromaError::BadHop(2048)));
    }
}
