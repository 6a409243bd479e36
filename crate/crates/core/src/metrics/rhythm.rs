use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::audio::Waveform;
use crate::dsp::math::{ceil, round, sqrt};
use crate::dsp::onset::{onset_frames, OnsetParams};

pub const DEFAULT_GRID_RATE: f64 = 100.0;

/// Binary onset indicator on a fixed time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseTrain {
    pub grid_rate: f64,
    pub values: Vec<u8>,
}

fn grid_len(duration: f64, grid_rate: f64) -> usize {
    // the epsilon keeps 6.5 s at 100 Hz from becoming 651 bins
    ceil(duration.max(0.0) * grid_rate - 1e-9).max(0.0) as usize
}

impl ImpulseTrain {
    pub fn zeros(grid_rate: f64, duration: f64) -> Self {
        ImpulseTrain {
            grid_rate,
            values: vec![0; grid_len(duration, grid_rate)],
        }
    }

    /// Marks the bin nearest each onset; onsets past the end land in the last bin.
    pub fn from_onsets(onsets: &[f64], duration: f64, grid_rate: f64) -> Self {
        let mut t = Self::zeros(grid_rate, duration);
        if let Some(last) = t.values.len().checked_sub(1) {
            for &o in onsets {
                let bin = (round(o.max(0.0) * grid_rate) as usize).min(last);
                t.values[bin] = 1;
            }
        }
        t
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|v| **v != 0).count()
    }

    /// Times of the marked bins in seconds.
    pub fn onset_times(&self) -> Vec<f64> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0)
            .map(|(i, _)| i as f64 / self.grid_rate)
            .collect()
    }
}

/// Onsets of a (mono or stereo) waveform on the 100 Hz grid.
pub fn detect_onsets(audio: &Waveform) -> ImpulseTrain {
    detect_onsets_with(audio, &OnsetParams::default())
}

pub fn detect_onsets_with(audio: &Waveform, params: &OnsetParams) -> ImpulseTrain {
    let mut train = ImpulseTrain::zeros(params.grid_rate, audio.duration());
    if audio.is_empty() || train.is_empty() {
        return train;
    }
    let last = train.len() - 1;
    for k in onset_frames(&audio.to_mono(), audio.sample_rate, params) {
        train.values[k.min(last)] = 1;
    }
    train
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XcorrResult {
    /// Largest raw correlation value.
    pub peak: f64,
    pub lag_bins: i64,
    /// Lag of the peak in seconds.
    pub lag: f64,
    /// Peak divided by `sqrt(sum x^2 * sum y^2)`, in [0, 1].
    pub normalized: f64,
    /// `raw[i]` is the correlation at lag `i - max_lag_bins`.
    pub raw: Vec<f64>,
    pub max_lag_bins: usize,
}

/// `R(k) = sum_t x(t) * y(t + k)` for `|k| <= max_lag * grid_rate`.
///
/// With this convention a `y` that lags `x` by `d` bins peaks at `k = +d`.
/// Ties go to the smallest `|k|`, then to the positive lag.
pub fn rhythm_xcorr(x: &ImpulseTrain, y: &ImpulseTrain, max_lag: f64) -> Result<XcorrResult, MetricError> {
    if (x.grid_rate - y.grid_rate).abs() > 1e-9 {
        return Err(MetricError::GridMismatch(x.grid_rate, y.grid_rate));
    }
    if !(max_lag.is_finite() && max_lag >= 0.0) {
        return Err(MetricError::BadLag);
    }
    let kmax = round(max_lag * x.grid_rate) as usize;
    let xs: Vec<usize> = (0..x.len()).filter(|&t| x.values[t] != 0).collect();
    let mut raw = vec![0.0; 2 * kmax + 1];
    for (i, slot) in raw.iter_mut().enumerate() {
        let k = i as i64 - kmax as i64;
        let mut acc = 0.0;
        for &t in &xs {
            let j = t as i64 + k;
            if j >= 0 && (j as usize) < y.len() {
                acc += (x.values[t] as f64) * (y.values[j as usize] as f64);
            }
        }
        *slot = acc;
    }
    let mut best = kmax;
    for i in 0..raw.len() {
        let (k, kb) = (i.abs_diff(kmax), best.abs_diff(kmax));
        let better = raw[i] > raw[best] || (raw[i] == raw[best] && (k < kb || (k == kb && i > best)));
        if better {
            best = i;
        }
    }
    let energy = |t: &ImpulseTrain| t.values.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>();
    let denom = sqrt(energy(x) * energy(y));
    let peak = raw[best];
    let lag_bins = best as i64 - kmax as i64;
    Ok(XcorrResult {
        peak,
        lag_bins,
        lag: lag_bins as f64 / x.grid_rate,
        normalized: if denom > 0.0 { (peak / denom).clamp(0.0, 1.0) } else { 0.0 },
        raw,
        max_lag_bins: kmax,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delayed_copy_peaks_at_positive_lag() {
        let x = ImpulseTrain::from_onsets(&[0.1, 0.5], 1.0, 100.0);
        let y = ImpulseTrain::from_onsets(&[0.13, 0.53], 1.0, 100.0);
        let r = rhythm_xcorr(&x, &y, 0.1).unwrap();
        assert_eq!((r.peak, r.lag_bins, r.normalized), (2.0, 3, 1.0));
        assert_eq!(r.raw.len(), 21);
    }

    #[test]
    fn grid_length_rule() {
        assert_eq!(ImpulseTrain::zeros(100.0, 6.5).len(), 650);
        assert_eq!(ImpulseTrain::zeros(100.0, 0.001).len(), 1);
        assert_eq!(ImpulseTrain::zeros(100.0, 0.0).len(), 0);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = ImpulseTrain::zeros(100.0, 1.0);
        let b = ImpulseTrain::zeros(50.0, 1.0);
        assert!(matches!(rhythm_xcorr(&a, &b, 0.1), Err(MetricError::GridMismatch(..))));
    }
}
