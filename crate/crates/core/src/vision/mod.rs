//! Visual analysis: frame ingestion, optical-flow motion features, shot
//! cuts and the attribute report that feeds generation prompts.

mod cuts;
mod flow;
mod image;
mod report;

pub use cuts::{chi_square, detect_shot_cuts, detect_shot_cuts_with, histogram, CutParams};
pub use flow::{
    flow_magnitude, motion_saliency, motion_speed, optical_flow_magnitudes, FlowParams, FlowSeries,
};
pub use image::{decode_netpbm, decode_raw_stream, encode_pgm, encode_raw_stream, RAW_MAGIC};
pub use report::{build_description, validate_visual_report, Category, Labels, Vocabulary, VisualReport};

use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisionError {
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("frame {index} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    MixedDimensions {
        index: usize,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("frame rate must be positive")]
    BadFrameRate,
    #[error("frame {0} has the wrong number of pixels")]
    BadFrameSize(usize),
    #[error("image decode failed: {0}")]
    Decode(String),
    #[error("range {start}..{end} is invalid for {len} values")]
    BadRange { start: usize, end: usize, len: usize },
    #[error("range must hold at least {0} values")]
    RangeTooShort(usize),
    #[error("flow magnitudes must be finite and non-negative (line {0})")]
    BadMagnitude(usize),
    #[error("visual report is invalid")]
    InvalidReport,
}

/// Grayscale 8-bit frames of equal size, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub width: usize,
    pub height: usize,
    pub frame_rate: f64,
    pub frames: Vec<Vec<u8>>,
}

impl FrameSequence {
    pub fn new(width: usize, height: usize, frame_rate: f64, frames: Vec<Vec<u8>>) -> Result<Self, VisionError> {
        if frames.len() < 2 {
            return Err(VisionError::TooFewFrames(frames.len()));
        }
        if !(frame_rate > 0.0) || !frame_rate.is_finite() {
            return Err(VisionError::BadFrameRate);
        }
        if let Some(i) = frames.iter().position(|f| f.len() != width * height) {
            return Err(VisionError::BadFrameSize(i));
        }
        Ok(FrameSequence {
            width,
            height,
            frame_rate,
            frames,
        })
    }

    /// Builds a sequence from decoded images, rejecting mixed sizes.
    pub fn from_images(images: Vec<(usize, usize, Vec<u8>)>, frame_rate: f64) -> Result<Self, VisionError> {
        let Some(&(w, h, _)) = images.first() else {
            return Err(VisionError::TooFewFrames(0));
        };
        let mut frames = Vec::with_capacity(images.len());
        for (index, (iw, ih, px)) in images.into_iter().enumerate() {
            if (iw, ih) != (w, h) {
                return Err(VisionError::MixedDimensions {
                    index,
                    got_w: iw,
                    got_h: ih,
                    want_w: w,
                    want_h: h,
                });
            }
            frames.push(px);
        }
        Self::new(w, h, frame_rate, frames)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.frame_rate
    }
}
