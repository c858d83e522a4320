//! Canonical media encodings.
//!
//! * Raster: binary portable pixmap, `P5` (grey) or `P6` (RGB), maxval 255,
//!   header written as `P6\n{w} {h}\n255\n`. Only that exact header form is
//!   accepted so that decode/encode is a bijection.
//! * Audio: `PCMS` magic, `u32` little-endian sample rate, `u16`
//!   little-endian channel count, then interleaved 16-bit little-endian
//!   samples.
//! * Text: UTF-8.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MediaError {
    #[error("malformed raster: {0}")]
    Raster(&'static str),
    #[error("malformed audio: {0}")]
    Audio(&'static str),
    #[error("text payload is not valid UTF-8")]
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// 1 for P5, 3 for P6.
    pub channels: usize,
    /// Row-major, channel-interleaved samples.
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Self {
            width,
            height,
            channels,
            data: vec![0; width * height * channels],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// First channel of pixel `idx` (row-major).
    #[inline]
    pub fn first(&self, idx: usize) -> u8 {
        self.data[idx * self.channels]
    }

    #[inline]
    pub fn first_mut(&mut self, idx: usize) -> &mut u8 {
        &mut self.data[idx * self.channels]
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, MediaError> {
        let (channels, rest) = match bytes.get(..3) {
            Some(b"P5\n") => (1, &bytes[3..]),
            Some(b"P6\n") => (3, &bytes[3..]),
            _ => return Err(MediaError::Raster("expected P5 or P6 magic")),
        };
        let (width, rest) = read_decimal(rest, b' ').ok_or(MediaError::Raster("width"))?;
        let (height, rest) = read_decimal(rest, b'\n').ok_or(MediaError::Raster("height"))?;
        let rest = rest
            .strip_prefix(b"255\n")
            .ok_or(MediaError::Raster("maxval must be 255"))?;
        if width == 0 || height == 0 {
            return Err(MediaError::Raster("zero dimension"));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or(MediaError::Raster("dimensions overflow"))?;
        if rest.len() != expected {
            return Err(MediaError::Raster("sample count does not match header"));
        }
        Ok(Self {
            width,
            height,
            channels,
            data: rest.to_vec(),
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let header = format!("{magic}\n{} {}\n255\n", self.width, self.height);
        let mut out = Vec::with_capacity(header.len() + self.data.len());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&self.data);
        out
    }
}

/// Canonical decimal: no sign, no leading zeros (except "0"), then `term`.
fn read_decimal(bytes: &[u8], term: u8) -> Option<(usize, &[u8])> {
    let end = bytes.iter().position(|&b| b == term)?;
    let digits = &bytes[..end];
    if digits.is_empty() || digits.len() > 9 || !digits.iter().all(u8::is_ascii_digit) {
        return None;
    }
    if digits.len() > 1 && digits[0] == b'0' {
        return None;
    }
    let value = std::str::from_utf8(digits).ok()?.parse().ok()?;
    Some((value, &bytes[end + 1..]))
}

pub const PCM_MAGIC: &[u8; 4] = b"PCMS";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pcm {
    pub sample_rate: u32,
    pub channels: u16,
    pub samples: Vec<i16>,
}

impl Pcm {
    pub fn decode(bytes: &[u8]) -> Result<Self, MediaError> {
        let rest = bytes
            .strip_prefix(PCM_MAGIC.as_slice())
            .ok_or(MediaError::Audio("expected PCMS magic"))?;
        if rest.len() < 6 {
            return Err(MediaError::Audio("truncated header"));
        }
        let sample_rate = u32::from_le_bytes([rest[0], rest[1], rest[2], rest[3]]);
        let channels = u16::from_le_bytes([rest[4], rest[5]]);
        if sample_rate == 0 || channels == 0 {
            return Err(MediaError::Audio("zero sample rate or channel count"));
        }
        let body = &rest[6..];
        if body.len() % (2 * channels as usize) != 0 {
            return Err(MediaError::Audio("partial frame"));
        }
        let samples = body
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect();
        Ok(Self {
            sample_rate,
            channels,
            samples,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + 2 * self.samples.len());
        out.extend_from_slice(PCM_MAGIC);
        out.extend_from_slice(&self.sample_rate.to_le_bytes());
        out.extend_from_slice(&self.channels.to_le_bytes());
        for s in &self.samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }
}
