use alloc::vec::Vec;

use super::{cosine, MetricError};
use crate::conditioning::Chromagram;
use crate::dsp::math::round;

pub const DEFAULT_SEGMENT_SECONDS: f64 = 1.0;

/// Mean chroma vector of each consecutive segment; the last may be partial.
pub fn segment_means(chroma: &Chromagram, segment_seconds: f64) -> Vec<[f64; 12]> {
    let per = (round(segment_seconds * chroma.sample_rate as f64 / chroma.hop as f64) as usize).max(1);
    chroma
        .frames
        .chunks(per)
        .map(|block| {
            let mut m = [0.0; 12];
            for f in block {
                for (a, v) in m.iter_mut().zip(f) {
                    *a += v;
                }
            }
            m.map(|a| a / block.len() as f64)
        })
        .collect()
}

fn similarity(a: &[[f64; 12]], b: &[[f64; 12]]) -> f64 {
    let n = a.len().min(b.len());
    (0..n).map(|s| cosine(&a[s], &b[s])).sum::<f64>() / n as f64
}

pub fn chroma_diversity(set: &[Chromagram]) -> Result<f64, MetricError> {
    chroma_diversity_with(set, DEFAULT_SEGMENT_SECONDS)
}

/// One minus the mean pairwise similarity, where the similarity of two
/// chromagrams is the mean cosine of their aligned segment averages.
pub fn chroma_diversity_with(set: &[Chromagram], segment_seconds: f64) -> Result<f64, MetricError> {
    if set.len() < 2 {
        return Err(MetricError::TooFew(set.len()));
    }
    if !(segment_seconds.is_finite() && segment_seconds > 0.0) {
        return Err(MetricError::BadParameter("segment length must be positive"));
    }
    for (i, c) in set.iter().enumerate() {
        if c.one_hot {
            return Err(MetricError::OneHot(i));
        }
        if c.is_empty() {
            return Err(MetricError::EmptyChroma(i));
        }
    }
    let segs: Vec<Vec<[f64; 12]>> = set.iter().map(|c| segment_means(c, segment_seconds)).collect();
    let n = set.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += similarity(&segs[i], &segs[j]);
        }
    }
    let d = 1.0 - 2.0 * total / (n * (n - 1)) as f64;
    Ok(d.clamp(0.0, 1.0))
}
