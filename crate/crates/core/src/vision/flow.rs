//! Horn–Schunck optical flow and the motion features built on it.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use super::{FrameSequence, VisionError};
use crate::dsp::math::sqrt;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    /// Smoothness weight; the update divides by `alpha² + Ex² + Ey²`.
    pub alpha: f64,
    pub iterations: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            alpha: 15.0,
            iterations: 50,
        }
    }
}

/// Mean flow magnitude per frame transition.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSeries {
    pub magnitudes: Vec<f64>,
}

impl FlowSeries {
    pub fn new(magnitudes: Vec<f64>) -> Result<Self, VisionError> {
        if let Some(i) = magnitudes.iter().position(|m| !m.is_finite() || *m < 0.0) {
            return Err(VisionError::BadMagnitude(i + 1));
        }
        Ok(FlowSeries { magnitudes })
    }

    /// Reads precomputed magnitudes, one decimal per line. Blank lines are
    /// skipped.
    pub fn from_text(text: &str) -> Result<Self, VisionError> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line.parse().map_err(|_| VisionError::BadMagnitude(i + 1))?;
            if !v.is_finite() || v < 0.0 {
                return Err(VisionError::BadMagnitude(i + 1));
            }
            out.push(v);
        }
        Ok(FlowSeries { magnitudes: out })
    }

    pub fn to_text(&self) -> alloc::string::String {
        let mut s = alloc::string::String::new();
        for m in &self.magnitudes {
            s.push_str(&alloc::format!("{m}\n"));
        }
        s
    }
}

struct Grid<'a> {
    data: &'a [f64],
    w: usize,
    h: usize,
}

impl Grid<'_> {
    /// Pixel with edge replication.
    fn at(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.data[y * self.w + x]
    }
}

/// Mean of `sqrt(u² + v²)` over all pixels of the Horn–Schunck field
/// between two frames.
pub fn flow_magnitude(a: &[u8], b: &[u8], width: usize, height: usize, params: FlowParams) -> f64 {
    let n = width * height;
    if n == 0 {
        return 0.0;
    }
    let e1: Vec<f64> = a.iter().map(|&p| p as f64).collect();
    let e2: Vec<f64> = b.iter().map(|&p| p as f64).collect();
    let g1 = Grid { data: &e1, w: width, h: height };
    let g2 = Grid { data: &e2, w: width, h: height };

    // first differences averaged over the 2x2x2 cube
    let mut ex = vec![0.0; n];
    let mut ey = vec![0.0; n];
    let mut et = vec![0.0; n];
    for y in 0..height as isize {
        for x in 0..width as isize {
            let i = y as usize * width + x as usize;
            let c = |g: &Grid<'_>, dx: isize, dy: isize| g.at(x + dx, y + dy);
            ex[i] = 0.25
                * (c(&g1, 1, 0) - c(&g1, 0, 0) + c(&g1, 1, 1) - c(&g1, 0, 1) + c(&g2, 1, 0) - c(&g2, 0, 0)
                    + c(&g2, 1, 1)
                    - c(&g2, 0, 1));
            ey[i] = 0.25
                * (c(&g1, 0, 1) - c(&g1, 0, 0) + c(&g1, 1, 1) - c(&g1, 1, 0) + c(&g2, 0, 1) - c(&g2, 0, 0)
                    + c(&g2, 1, 1)
                    - c(&g2, 1, 0));
            et[i] = 0.25
                * (c(&g2, 0, 0) - c(&g1, 0, 0) + c(&g2, 1, 0) - c(&g1, 1, 0) + c(&g2, 0, 1) - c(&g1, 0, 1)
                    + c(&g2, 1, 1)
                    - c(&g1, 1, 1));
        }
    }

    let alpha2 = params.alpha * params.alpha;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut un = vec![0.0; n];
    let mut vn = vec![0.0; n];
    for _ in 0..params.iterations {
        {
            let gu = Grid { data: &u, w: width, h: height };
            let gv = Grid { data: &v, w: width, h: height };
            for y in 0..height as isize {
                for x in 0..width as isize {
                    let i = y as usize * width + x as usize;
                    let avg = |g: &Grid<'_>| {
                        (g.at(x - 1, y) + g.at(x + 1, y) + g.at(x, y - 1) + g.at(x, y + 1)) / 6.0
                            + (g.at(x - 1, y - 1) + g.at(x + 1, y - 1) + g.at(x - 1, y + 1) + g.at(x + 1, y + 1))
                                / 12.0
                    };
                    let (ub, vb) = (avg(&gu), avg(&gv));
                    let t = (ex[i] * ub + ey[i] * vb + et[i]) / (alpha2 + ex[i] * ex[i] + ey[i] * ey[i]);
                    un[i] = ub - ex[i] * t;
                    vn[i] = vb - ey[i] * t;
                }
            }
        }
        core::mem::swap(&mut u, &mut un);
        core::mem::swap(&mut v, &mut vn);
    }
    u.iter().zip(&v).map(|(a, b)| sqrt(a * a + b * b)).sum::<f64>() / n as f64
}

/// Flow magnitude for every consecutive pair of frames.
pub fn optical_flow_magnitudes(frames: &FrameSequence, params: FlowParams) -> FlowSeries {
    let magnitudes = frames
        .frames
        .windows(2)
        .map(|w| flow_magnitude(&w[0], &w[1], frames.width, frames.height, params))
        .collect();
    FlowSeries { magnitudes }
}

fn check_range(flow: &FlowSeries, range: &Range<usize>, min_len: usize) -> Result<(), VisionError> {
    let len = flow.magnitudes.len();
    if range.start > range.end || range.end > len {
        return Err(VisionError::BadRange {
            start: range.start,
            end: range.end,
            len,
        });
    }
    if range.end - range.start < min_len {
        return Err(VisionError::RangeTooShort(min_len));
    }
    Ok(())
}

/// Mean magnitude over `range`.
pub fn motion_speed(flow: &FlowSeries, range: Range<usize>) -> Result<f64, VisionError> {
    check_range(flow, &range, 1)?;
    let slice = &flow.magnitudes[range];
    Ok(slice.iter().sum::<f64>() / slice.len() as f64)
}

/// Mean of the strictly positive successive increases over `range`, or 0
/// when the magnitude never rises.
pub fn motion_saliency(flow: &FlowSeries, range: Range<usize>) -> Result<f64, VisionError> {
    check_range(flow, &range, 2)?;
    let (sum, count) = flow.magnitudes[range]
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 0.0)
        .fold((0.0, 0usize), |(s, c), d| (s + d, c + 1));
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::math::sin;

    fn pattern(w: usize, h: usize, shift: f64) -> Vec<u8> {
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let fx = x as f64 - shift;
                let v = 127.5
                    + 60.0 * sin(2.0 * core::f64::consts::PI * fx / 16.0)
                    + 60.0 * sin(2.0 * core::f64::consts::PI * y as f64 / 16.0);
                out.push(v.clamp(0.0, 255.0) as u8);
            }
        }
        out
    }

    #[test]
    fn static_frames_have_no_flow() {
        let a = pattern(32, 32, 0.0);
        assert!(flow_magnitude(&a, &a, 32, 32, FlowParams::default()) < 1e-6);
    }

    #[test]
    fn one_pixel_shift_is_about_one() {
        let a = pattern(48, 48, 0.0);
        let b = pattern(48, 48, 1.0);
        let m = flow_magnitude(&a, &b, 48, 48, FlowParams::default());
        assert!((m - 1.0).abs() <= 0.3, "magnitude {m}");
    }

    #[test]
    fn speed_and_saliency_examples() {
        let f = FlowSeries::new(alloc::vec![1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!(motion_speed(&f, 0..4).unwrap(), 2.75);
        assert_eq!(motion_saliency(&f, 0..4).unwrap(), 2.5);
        let down = FlowSeries::new(alloc::vec![4.0, 3.0, 2.0]).unwrap();
        assert_eq!(motion_saliency(&down, 0..3).unwrap(), 0.0);
        assert!(motion_speed(&f, 2..2).is_err());
        assert!(motion_saliency(&f, 1..2).is_err());
        assert!(motion_speed(&f, 0..5).is_err());
    }

    #[test]
    fn text_passthrough() {
        let f = FlowSeries::from_text("0.5\n\n1.25\n").unwrap();
        assert_eq!(f.magnitudes, alloc::vec![0.5, 1.25]);
        assert_eq!(FlowSeries::from_text(&f.to_text()).unwrap(), f);
        assert_eq!(FlowSeries::from_text("1\n-2\n"), Err(VisionError::BadMagnitude(2)));
    }
}
