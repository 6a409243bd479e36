use alloc::vec;
use alloc::vec::Vec;

use super::{RenderError, Signal};
use crate::audio::Waveform;
use crate::dsp::math::{cos, db_to_gain, round, sin};
use crate::notation::MidiSong;
use crate::scheme::{Breakpoint, DynamicsOffsets, TrackPlan};

/// Per-measure dynamic marks with linear crossfades of `crossfade` seconds
/// centred on each barline, followed by the volume envelope.
pub fn apply_dynamics(
    audio: &Signal,
    plan: &TrackPlan,
    song: &MidiSong,
    offsets: &DynamicsOffsets,
    crossfade: f64,
) -> Signal {
    let sr = audio.sample_rate as f64;
    let len = audio.len();
    let mut gain = vec![1.0; len];
    let measures = song.measure_count().max(1);
    let half = round(crossfade * sr / 2.0) as usize;
    // piecewise-constant measure gains
    let bounds: Vec<usize> = (0..=measures)
        .map(|m| if m == measures { len } else { (round(song.measure_start(m) * sr) as usize).min(len) })
        .collect();
    let gains: Vec<f64> = (0..measures).map(|m| db_to_gain(plan.measure_gain_db(m, offsets))).collect();
    for m in 0..measures {
        for g in &mut gain[bounds[m]..bounds[m + 1]] {
            *g = gains[m];
        }
    }
    for m in 1..measures {
        let (a, b) = (gains[m - 1], gains[m]);
        if a == b || half == 0 {
            continue;
        }
        let centre = bounds[m];
        let lo = centre.saturating_sub(half);
        let hi = (centre + half).min(len);
        let width = (hi - lo) as f64;
        for (i, g) in gain[lo..hi].iter_mut().enumerate() {
            let x = (i as f64 + 0.5) / width;
            *g = a + (b - a) * x;
        }
    }
    if !plan.volume_envelope.is_empty() {
        for (i, g) in gain.iter_mut().enumerate() {
            *g *= db_to_gain(envelope_db(&plan.volume_envelope, i as f64 / sr));
        }
    }
    let channels = audio
        .channels
        .iter()
        .map(|c| c.iter().zip(&gain).map(|(s, g)| s * g).collect())
        .collect();
    Signal {
        sample_rate: audio.sample_rate,
        channels,
    }
}

/// Piecewise-linear dB value of an envelope, held flat outside its span.
pub fn envelope_db(points: &[Breakpoint], t: f64) -> f64 {
    match points {
        [] => 0.0,
        [first, ..] if t <= first.time => first.gain_db,
        [.., last] if t >= last.time => last.gain_db,
        _ => {
            let i = points.iter().position(|p| p.time > t).unwrap_or(points.len() - 1);
            let (a, b) = (points[i - 1], points[i]);
            a.gain_db + (b.gain_db - a.gain_db) * (t - a.time) / (b.time - a.time)
        }
    }
}

/// Constant-power pan of a mono signal.
pub fn apply_pan(audio: &Signal, pan: f64) -> Result<Signal, RenderError> {
    if audio.channels.len() != 1 {
        return Err(RenderError::NotMono(audio.channels.len()));
    }
    let angle = (pan.clamp(-1.0, 1.0) + 1.0) * core::f64::consts::FRAC_PI_4;
    let (gl, gr) = (cos(angle), sin(angle));
    let src = &audio.channels[0];
    Ok(Signal {
        sample_rate: audio.sample_rate,
        channels: vec![src.iter().map(|s| s * gl).collect(), src.iter().map(|s| s * gr).collect()],
    })
}

const COMB_DELAYS_MS: [f64; 4] = [29.7, 37.1, 41.1, 43.7];
const COMB_FEEDBACK: f64 = 0.805;
const ALLPASS_DELAYS_MS: [f64; 2] = [5.0, 1.7];
const ALLPASS_GAIN: f64 = 0.7;

fn delay_samples(ms: f64, sr: f64) -> usize {
    (round(ms * sr / 1000.0) as usize).max(1)
}

/// Four parallel feedback combs into two series allpasses.
pub fn schroeder(input: &[f64], sample_rate: u32) -> Vec<f64> {
    let sr = sample_rate as f64;
    let mut sum = vec![0.0; input.len()];
    for ms in COMB_DELAYS_MS {
        let d = delay_samples(ms, sr);
        let mut y = vec![0.0; input.len()];
        for n in d..input.len() {
            y[n] = input[n - d] + COMB_FEEDBACK * y[n - d];
        }
        for (s, v) in sum.iter_mut().zip(&y) {
            *s += 0.25 * v;
        }
    }
    let mut x = sum;
    for ms in ALLPASS_DELAYS_MS {
        let d = delay_samples(ms, sr);
        let mut y = vec![0.0; x.len()];
        for n in 0..x.len() {
            let xd = if n >= d { x[n - d] } else { 0.0 };
            let yd = if n >= d { y[n - d] } else { 0.0 };
            y[n] = -ALLPASS_GAIN * x[n] + xd + ALLPASS_GAIN * yd;
        }
        x = y;
    }
    x
}

/// Dry signal plus `reverb(input) * send * level`; a zero product returns
/// the input untouched.
pub fn apply_reverb(audio: &Signal, send: f64, level: f64) -> Signal {
    let amount = send * level;
    if amount == 0.0 {
        return audio.clone();
    }
    let channels = audio
        .channels
        .iter()
        .map(|c| {
            let wet = schroeder(c, audio.sample_rate);
            c.iter().zip(&wet).map(|(d, w)| d + w * amount).collect()
        })
        .collect();
    Signal {
        sample_rate: audio.sample_rate,
        channels,
    }
}

/// Sums stereo tracks in the given order, applies the master gain and
/// hard-clamps to [-1, 1].
pub fn mixdown(tracks: &[Signal], master_gain_db: f64, sample_rate: u32, length: usize) -> Result<Waveform, RenderError> {
    let mut acc = vec![vec![0.0f64; length]; 2];
    for (i, t) in tracks.iter().enumerate() {
        if t.sample_rate != sample_rate || t.len() != length || t.channels.len() != 2 {
            return Err(RenderError::Mismatch(i));
        }
        for (a, c) in acc.iter_mut().zip(&t.channels) {
            for (x, y) in a.iter_mut().zip(c) {
                *x += y;
            }
        }
    }
    let g = db_to_gain(master_gain_db);
    let channels = acc
        .into_iter()
        .map(|c| c.into_iter().map(|v| (v * g).clamp(-1.0, 1.0) as f32).collect())
        .collect();
    Ok(Waveform::new(sample_rate, channels)?)
}
