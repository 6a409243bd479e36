//! Hard-cut detection from grayscale histogram distances.

use alloc::vec;
use alloc::vec::Vec;

use super::FrameSequence;
use crate::dsp::math::{mean, std_dev};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutParams {
    pub bins: usize,
    /// Number of transitions in the centred statistics window.
    pub window: usize,
    /// Standard deviations above the window mean.
    pub sigma: f64,
    /// Minimum frames between cuts, also counted from the first frame.
    pub min_scene_len: usize,
}

impl Default for CutParams {
    fn default() -> Self {
        CutParams {
            bins: 64,
            window: 25,
            sigma: 3.0,
            min_scene_len: 10,
        }
    }
}

/// Normalized histogram of 8-bit values.
pub fn histogram(frame: &[u8], bins: usize) -> Vec<f64> {
    let bins = bins.clamp(1, 256);
    let mut h = vec![0.0; bins];
    for &p in frame {
        h[p as usize * bins / 256] += 1.0;
    }
    let total = frame.len().max(1) as f64;
    h.iter_mut().for_each(|v| *v /= total);
    h
}

/// Symmetric chi-square distance, skipping bins empty in both.
pub fn chi_square(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(x, y)| **x + **y > 0.0)
        .map(|(x, y)| (x - y) * (x - y) / (x + y))
        .sum()
}

pub fn detect_shot_cuts(frames: &FrameSequence) -> Vec<f64> {
    detect_shot_cuts_with(frames, CutParams::default())
}

/// Cut times in seconds. A transition into frame `k` is a cut when its
/// distance beats the local adaptive threshold and at least
/// `min_scene_len` frames have passed since the previous cut.
pub fn detect_shot_cuts_with(frames: &FrameSequence, params: CutParams) -> Vec<f64> {
    let hists: Vec<Vec<f64>> = frames.frames.iter().map(|f| histogram(f, params.bins)).collect();
    let dist: Vec<f64> = hists.windows(2).map(|w| chi_square(&w[0], &w[1])).collect();
    let half = params.window / 2;
    let mut cuts = Vec::new();
    let mut last_cut_frame = 0usize;
    for (i, &d) in dist.iter().enumerate() {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(dist.len());
        let local = &dist[lo..hi];
        let threshold = mean(local) + params.sigma * std_dev(local);
        let frame = i + 1;
        if d > threshold && frame - last_cut_frame >= params.min_scene_len {
            cuts.push(frame as f64 / frames.frame_rate);
            last_cut_frame = frame;
        }
    }
    cuts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(frames: Vec<Vec<u8>>, fps: f64) -> FrameSequence {
        FrameSequence::new(8, 8, fps, frames).unwrap()
    }

    #[test]
    fn constant_sequence_has_no_cuts() {
        let s = seq(vec![vec![90; 64]; 40], 10.0);
        assert!(detect_shot_cuts(&s).is_empty());
    }

    #[test]
    fn black_to_white_cut() {
        let mut frames = vec![vec![0u8; 64]; 30];
        frames.extend(vec![vec![255u8; 64]; 30]);
        assert_eq!(detect_shot_cuts(&seq(frames, 10.0)), vec![3.0]);
    }

    #[test]
    fn cut_too_early_is_suppressed() {
        let mut frames = vec![vec![0u8; 64]; 5];
        frames.extend(vec![vec![255u8; 64]; 30]);
        assert!(detect_shot_cuts(&seq(frames, 10.0)).is_empty());
    }

    #[test]
    fn chi_square_bounds() {
        let a = histogram(&[0; 16], 64);
        let b = histogram(&[255; 16], 64);
        assert_eq!(chi_square(&a, &a), 0.0);
        assert_eq!(chi_square(&a, &b), 2.0);
    }
}
