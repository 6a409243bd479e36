//! Spectral-flux onset detection on a 100 Hz frame grid.

use alloc::vec::Vec;

use super::fft::Stft;
use super::math::{ln_1p, mean, round, std_dev};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnsetParams {
    /// Analysis frames per second; the hop is `sample_rate / grid_rate`.
    pub grid_rate: f64,
    pub window: usize,
    /// Half-width, in frames, of the adaptive threshold window.
    pub context: usize,
    pub sigma: f64,
    /// Minimum distance between onsets, in frames.
    pub min_gap: usize,
    /// Peaks below this fraction of the strongest flux are ignored.
    pub relative_floor: f64,
    /// Magnitudes are compressed as `ln(1 + compression * |X|)` before
    /// differencing; 0 keeps them linear. Compression makes slow attacks
    /// register where they begin rather than where they are steepest.
    pub compression: f64,
}

impl Default for OnsetParams {
    fn default() -> Self {
        OnsetParams {
            grid_rate: 100.0,
            window: 1024,
            context: 15,
            sigma: 1.5,
            min_gap: 5,
            relative_floor: 0.05,
            compression: 1.0,
        }
    }
}

/// Half-wave-rectified spectral flux. Frame `k` is centred on sample
/// `k * hop`; frame 0 is compared against silence.
pub fn spectral_flux(signal: &[f64], sample_rate: u32, params: &OnsetParams) -> Vec<f64> {
    let hop = round(sample_rate as f64 / params.grid_rate).max(1.0) as usize;
    let n_frames = signal.len().div_ceil(hop);
    let half = params.window / 2;
    let mut stft = Stft::hann(params.window);
    let mut frame = alloc::vec![0.0; params.window];
    let mut prev: Vec<f64> = alloc::vec![0.0; params.window / 2 + 1];
    let mut cur = Vec::with_capacity(prev.len());
    let mut flux = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let centre = k * hop;
        for (i, slot) in frame.iter_mut().enumerate() {
            let idx = (centre + i).checked_sub(half);
            *slot = idx.and_then(|j| signal.get(j)).copied().unwrap_or(0.0);
        }
        stft.magnitudes(&frame, &mut cur);
        if params.compression > 0.0 {
            cur.iter_mut().for_each(|m| *m = ln_1p(params.compression * *m));
        }
        flux.push(cur.iter().zip(&prev).map(|(c, p)| (c - p).max(0.0)).sum());
        core::mem::swap(&mut prev, &mut cur);
    }
    flux
}

/// Frame indices of onsets picked from a flux curve.
pub fn pick_peaks(flux: &[f64], params: &OnsetParams) -> Vec<usize> {
    let max = flux.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let floor = params.relative_floor * max;
    let mut picked: Vec<usize> = Vec::new();
    for k in 0..flux.len() {
        let v = flux[k];
        if v <= floor {
            continue;
        }
        let lo = k.saturating_sub(params.context);
        let hi = (k + params.context + 1).min(flux.len());
        let local = &flux[lo..hi];
        if v <= mean(local) + params.sigma * std_dev(local) {
            continue;
        }
        // local maximum: strictly above the left neighbour, not below the right
        let left_ok = k == 0 || v > flux[k - 1];
        let right_ok = k + 1 >= flux.len() || v >= flux[k + 1];
        if !(left_ok && right_ok) {
            continue;
        }
        match picked.last_mut() {
            Some(last) if k - *last < params.min_gap => {
                if v > flux[*last] {
                    *last = k;
                }
            }
            _ => picked.push(k),
        }
    }
    picked
}

/// Onset frame indices of a mono signal.
pub fn onset_frames(signal: &[f64], sample_rate: u32, params: &OnsetParams) -> Vec<usize> {
    pick_peaks(&spectral_flux(signal, sample_rate, params), params)
}
