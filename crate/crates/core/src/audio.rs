//! Multi-channel sample buffers and PCM WAV encoding.

use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

use crate::dsp::math::round;

pub const SUPPORTED_RATES: [u32; 3] = [32_000, 44_100, 48_000];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AudioError {
    #[error("sample rate {0} Hz is not one of 32000, 44100, 48000")]
    UnsupportedRate(u32),
    #[error("expected 1 or 2 channels, got {0}")]
    BadChannelCount(usize),
    #[error("channels have different lengths")]
    LengthMismatch,
    #[error("sample {index} of channel {channel} is outside [-1, 1]")]
    OutOfRange { channel: usize, index: usize },
    #[error("unsupported bit depth {0}")]
    BitDepth(u16),
    #[error("audio too long for a WAV file")]
    TooLong,
}

/// Planar audio: one `Vec<f32>` per channel, all the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f32>>,
}

impl Waveform {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f32>>) -> Result<Self, AudioError> {
        if !SUPPORTED_RATES.contains(&sample_rate) {
            return Err(AudioError::UnsupportedRate(sample_rate));
        }
        if !(1..=2).contains(&channels.len()) {
            return Err(AudioError::BadChannelCount(channels.len()));
        }
        if channels.iter().any(|c| c.len() != channels[0].len()) {
            return Err(AudioError::LengthMismatch);
        }
        for (ci, c) in channels.iter().enumerate() {
            if let Some(index) = c.iter().position(|s| !(-1.0..=1.0).contains(s)) {
                return Err(AudioError::OutOfRange { channel: ci, index });
            }
        }
        Ok(Waveform {
            sample_rate,
            channels,
        })
    }

    pub fn mono(sample_rate: u32, samples: Vec<f32>) -> Result<Self, AudioError> {
        Self::new(sample_rate, vec![samples])
    }

    pub fn silent(sample_rate: u32, channels: usize, len: usize) -> Result<Self, AudioError> {
        Self::new(sample_rate, vec![vec![0.0; len]; channels])
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    /// Channel average as `f64`.
    pub fn to_mono(&self) -> Vec<f64> {
        let n = self.channels.len().max(1) as f64;
        (0..self.len())
            .map(|i| self.channels.iter().map(|c| c[i] as f64).sum::<f64>() / n)
            .collect()
    }
}

/// Size in bytes of the canonical 44-byte PCM header.
pub const WAV_HEADER_LEN: usize = 44;

/// Canonical RIFF/WAVE header for integer PCM.
pub fn wav_header(sample_rate: u32, channels: u16, bits: u16, frames: u32) -> Result<[u8; WAV_HEADER_LEN], AudioError> {
    let block_align = channels as u32 * (bits as u32 / 8);
    let data_len = (frames as u64) * block_align as u64;
    if data_len + 36 > u32::MAX as u64 {
        return Err(AudioError::TooLong);
    }
    let mut h = [0u8; WAV_HEADER_LEN];
    h[0..4].copy_from_slice(b"RIFF");
    h[4..8].copy_from_slice(&(36 + data_len as u32).to_le_bytes());
    h[8..12].copy_from_slice(b"WAVE");
    h[12..16].copy_from_slice(b"fmt ");
    h[16..20].copy_from_slice(&16u32.to_le_bytes());
    h[20..22].copy_from_slice(&1u16.to_le_bytes());
    h[22..24].copy_from_slice(&channels.to_le_bytes());
    h[24..28].copy_from_slice(&sample_rate.to_le_bytes());
    h[28..32].copy_from_slice(&(sample_rate * block_align).to_le_bytes());
    h[32..34].copy_from_slice(&(block_align as u16).to_le_bytes());
    h[34..36].copy_from_slice(&bits.to_le_bytes());
    h[36..40].copy_from_slice(b"data");
    h[40..44].copy_from_slice(&(data_len as u32).to_le_bytes());
    Ok(h)
}

/// Encodes interleaved little-endian PCM at 16 or 24 bits. Samples are
/// clamped to [-1, 1] and scaled by the largest positive code.
pub fn encode_wav(audio: &Waveform, bits: u16) -> Result<Vec<u8>, AudioError> {
    if bits != 16 && bits != 24 {
        return Err(AudioError::BitDepth(bits));
    }
    let frames = u32::try_from(audio.len()).map_err(|_| AudioError::TooLong)?;
    let header = wav_header(audio.sample_rate, audio.channel_count() as u16, bits, frames)?;
    let bytes_per = bits as usize / 8;
    let mut out = Vec::with_capacity(WAV_HEADER_LEN + audio.len() * audio.channel_count() * bytes_per);
    out.extend_from_slice(&header);
    let full = ((1i64 << (bits - 1)) - 1) as f64;
    for i in 0..audio.len() {
        for c in &audio.channels {
            let v = round((c[i] as f64).clamp(-1.0, 1.0) * full) as i32;
            out.extend_from_slice(&v.to_le_bytes()[..bytes_per]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_bytes_for_48k_24bit_stereo() {
        let h = wav_header(48_000, 2, 24, 1).unwrap();
        let expected: [u8; 44] = [
            b'R', b'I', b'F', b'F', 42, 0, 0, 0, b'W', b'A', b'V', b'E', b'f', b'm', b't', b' ', 16, 0, 0, 0, 1,
            0, 2, 0, 0x80, 0xbb, 0, 0, 0x00, 0x65, 0x04, 0x00, 6, 0, 24, 0, b'd', b'a', b't', b'a', 6, 0, 0, 0,
        ];
        assert_eq!(h, expected);
    }

    #[test]
    fn sample_codes() {
        let w = Waveform::new(48_000, vec![vec![1.0, -1.0, 0.0]]).unwrap();
        let b = encode_wav(&w, 24).unwrap();
        assert_eq!(&b[44..], &[0xff, 0xff, 0x7f, 0x01, 0x00, 0x80, 0, 0, 0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(Waveform::mono(22_050, vec![]), Err(AudioError::UnsupportedRate(22_050)));
        assert!(Waveform::mono(48_000, vec![1.5]).is_err());
        assert!(Waveform::new(48_000, vec![vec![0.0], vec![]]).is_err());
    }
}
