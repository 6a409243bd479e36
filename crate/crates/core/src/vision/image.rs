//! Netpbm (PGM/PPM) decoding and the raw planar frame stream.
//!
//! Raw stream layout, little-endian, 16-byte header:
//! `b"CKFS"`, width `u16`, height `u16`, frame count `u32`, fps `f32`,
//! then `count` planes of `width * height` gray bytes.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use super::{FrameSequence, VisionError};
use crate::dsp::math::round;

pub const RAW_MAGIC: [u8; 4] = *b"CKFS";
const RAW_HEADER: usize = 16;

fn decode_err(msg: &str) -> VisionError {
    VisionError::Decode(msg.to_string())
}

struct Tokens<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Tokens<'_> {
    fn skip_space(&mut self) {
        while let Some(&c) = self.data.get(self.pos) {
            if c == b'#' {
                while self.data.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize, VisionError> {
        self.skip_space();
        let start = self.pos;
        while self.data.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos || self.pos - start > 9 {
            return Err(decode_err("expected a header number"));
        }
        core::str::from_utf8(&self.data[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| decode_err("bad header number"))
    }
}

/// Decodes P2, P3, P5 or P6 into 8-bit gray. Colour uses Rec. 601 luma
/// and samples above 8 bits are rescaled.
pub fn decode_netpbm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), VisionError> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(decode_err("missing netpbm magic"));
    }
    let kind = bytes[1];
    let (channels, binary) = match kind {
        b'2' => (1, false),
        b'5' => (1, true),
        b'3' => (3, false),
        b'6' => (3, true),
        _ => return Err(decode_err("unsupported netpbm variant")),
    };
    let mut t = Tokens { data: bytes, pos: 2 };
    let w = t.number()?;
    let h = t.number()?;
    let maxval = t.number()?;
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(decode_err("bad netpbm dimensions"));
    }
    let samples = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(channels))
        .filter(|&n| n <= 1 << 28)
        .ok_or_else(|| decode_err("image too large"))?;
    let mut raw: Vec<usize> = Vec::with_capacity(samples);
    if binary {
        // exactly one whitespace byte separates header and raster
        t.pos += 1;
        let width = if maxval > 255 { 2 } else { 1 };
        let data = bytes
            .get(t.pos..)
            .filter(|d| d.len() >= samples * width)
            .ok_or_else(|| decode_err("truncated raster"))?;
        for i in 0..samples {
            raw.push(if width == 2 {
                (data[2 * i] as usize) << 8 | data[2 * i + 1] as usize
            } else {
                data[i] as usize
            });
        }
    } else {
        for _ in 0..samples {
            raw.push(t.number()?);
        }
    }
    let scale = |v: usize| -> f64 { v.min(maxval) as f64 * 255.0 / maxval as f64 };
    let px = if channels == 1 {
        raw.iter().map(|&v| round(scale(v)) as u8).collect()
    } else {
        raw.chunks_exact(3)
            .map(|c| round(0.299 * scale(c[0]) + 0.587 * scale(c[1]) + 0.114 * scale(c[2])).clamp(0.0, 255.0) as u8)
            .collect()
    };
    Ok((w, h, px))
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn decode_raw_stream(bytes: &[u8]) -> Result<FrameSequence, VisionError> {
    if bytes.len() < RAW_HEADER || bytes[0..4] != RAW_MAGIC {
        return Err(decode_err("missing raw stream header"));
    }
    let w = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let h = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let count = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let fps = f32::from_le_bytes([bytes[12], bytes[13], bytes[14], bytes[15]]) as f64;
    let plane = w * h;
    let body = &bytes[RAW_HEADER..];
    let needed = plane.checked_mul(count).ok_or_else(|| decode_err("frame count overflow"))?;
    if body.len() < needed {
        return Err(decode_err("raw stream shorter than its header declares"));
    }
    let frames = (0..count).map(|i| body[i * plane..(i + 1) * plane].to_vec()).collect();
    FrameSequence::new(w, h, fps, frames)
}

pub fn encode_raw_stream(seq: &FrameSequence) -> Result<Vec<u8>, VisionError> {
    let w = u16::try_from(seq.width).map_err(|_| decode_err("width exceeds 65535"))?;
    let h = u16::try_from(seq.height).map_err(|_| decode_err("height exceeds 65535"))?;
    let mut out = Vec::with_capacity(RAW_HEADER + seq.frames.len() * seq.width * seq.height);
    out.extend_from_slice(&RAW_MAGIC);
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&(seq.frames.len() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.frame_rate as f32).to_le_bytes());
    for f in &seq.frames {
        out.extend_from_slice(f);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn pgm_round_trip() {
        let px: Vec<u8> = (0..12).collect();
        assert_eq!(decode_netpbm(&encode_pgm(4, 3, &px)).unwrap(), (4, 3, px));
    }

    #[test]
    fn ascii_ppm_to_gray() {
        let (w, h, px) = decode_netpbm(b"P3\n# c\n2 1\n255\n255 255 255  255 0 0\n").unwrap();
        assert_eq!((w, h), (2, 1));
        assert_eq!(px, vec![255, 76]);
    }

    #[test]
    fn raw_stream_header_echo() {
        let seq = FrameSequence::new(2, 2, 24.0, vec![vec![1; 4], vec![2; 4], vec![3; 4]]).unwrap();
        let bytes = encode_raw_stream(&seq).unwrap();
        assert_eq!(bytes.len(), 16 + 12);
        assert_eq!(decode_raw_stream(&bytes).unwrap(), seq);
        assert!(decode_raw_stream(&bytes[..20]).is_err());
    }
}
