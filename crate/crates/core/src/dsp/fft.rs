//! Iterative radix-2 FFT and the short-time spectra built on it.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::math::{cos, sin, sqrt};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }

    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn norm(self) -> f64 {
        sqrt(self.norm_sqr())
    }
}

/// Twiddle factors `exp(-2πik/n)` for `k < n/2`.
pub fn twiddles(n: usize) -> Vec<Complex> {
    let angle = -2.0 * PI / n as f64;
    (0..n / 2)
        .map(|k| Complex::new(cos(angle * k as f64), sin(angle * k as f64)))
        .collect()
}

/// In-place forward FFT. `buf.len()` must be a power of two.
pub fn fft_in_place(buf: &mut [Complex]) {
    let table = twiddles(buf.len());
    fft_with_twiddles(buf, &table);
}

/// Forward FFT using a table from [`twiddles`] of the same length.
pub fn fft_with_twiddles(buf: &mut [Complex], table: &[Complex]) {
    let n = buf.len();
    assert!(n.is_power_of_two(), "fft length must be a power of two");
    if n <= 1 {
        return;
    }
    debug_assert_eq!(table.len(), n / 2);
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = table[k * stride];
                let a = buf[start + k];
                let b = buf[start + k + half];
                let t = Complex::new(w.re * b.re - w.im * b.im, w.re * b.im + w.im * b.re);
                buf[start + k] = Complex::new(a.re + t.re, a.im + t.im);
                buf[start + k + half] = Complex::new(a.re - t.re, a.im - t.im);
            }
        }
        len <<= 1;
    }
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * cos(2.0 * PI * i as f64 / n as f64))
        .collect()
}

/// Magnitude spectrum (bins `0..=n/2`) of `frame` multiplied by `window`.
/// `frame` shorter than the window is zero padded.
pub fn magnitude_spectrum(frame: &[f64], window: &[f64]) -> Vec<f64> {
    let mut stft = Stft::new(window.to_vec());
    let mut out = Vec::new();
    stft.magnitudes(frame, &mut out);
    out
}

/// Reusable windowed-FFT workspace for repeated frames of one size.
#[derive(Debug, Clone)]
pub struct Stft {
    window: Vec<f64>,
    table: Vec<Complex>,
    buf: Vec<Complex>,
}

impl Stft {
    pub fn new(window: Vec<f64>) -> Self {
        let n = window.len();
        Stft {
            window,
            table: twiddles(n),
            buf: vec![Complex::default(); n],
        }
    }

    /// Hann-windowed workspace of size `n`.
    pub fn hann(n: usize) -> Self {
        Self::new(hann(n))
    }

    pub fn size(&self) -> usize {
        self.window.len()
    }

    /// Writes the magnitudes of bins `0..=n/2` into `out`.
    pub fn magnitudes(&mut self, frame: &[f64], out: &mut Vec<f64>) {
        let n = self.window.len();
        for (i, slot) in self.buf.iter_mut().enumerate() {
            let x = frame.get(i).copied().unwrap_or(0.0);
            *slot = Complex::new(x * self.window[i], 0.0);
        }
        fft_with_twiddles(&mut self.buf, &self.table);
        out.clear();
        out.extend(self.buf[..=n / 2].iter().map(|c| c.norm()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[f64]) -> Vec<Complex> {
        let n = x.len();
        (0..n)
            .map(|k| {
                let mut acc = Complex::default();
                for (t, &v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (k * t) as f64 / n as f64;
                    acc.re += v * cos(a);
                    acc.im += v * sin(a);
                }
                acc
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        let x: Vec<f64> = (0..64).map(|i| ((i * 7919) % 23) as f64 / 23.0 - 0.4).collect();
        let mut buf: Vec<Complex> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        fft_in_place(&mut buf);
        for (a, b) in buf.iter().zip(naive_dft(&x)) {
            assert!((a.re - b.re).abs() < 1e-9 && (a.im - b.im).abs() < 1e-9);
        }
    }

    #[test]
    fn hann_endpoints() {
        let w = hann(8);
        assert_eq!(w[0], 0.0);
        assert!((w[4] - 1.0).abs() < 1e-15);
    }
}
