//! FSTS: a small binary file holding one frame-size series.
//!
//! ```text
//! "FSTS" | u16 version | u16 flags | f32 fps | u32 count | count x u64 bits
//! ```
//!
//! All integers little-endian. The low byte of `flags` is the codec
//! (0 unknown, 1 AVC, 2 HEVC); an fps of 0 means unknown.

use crate::bitstream::Codec;
use crate::series::FrameSizeSeries;
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const FSTS_MAGIC: [u8; 4] = *b"FSTS";
pub const FSTS_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum FstsError {
    #[error("not an FSTS file")]
    BadMagic,
    #[error("FSTS version {0} not supported")]
    UnsupportedVersion(u16),
    #[error("header declares {declared} frames, payload holds {actual}")]
    CountMismatch { declared: u64, actual: u64 },
    #[error("frame {0} has size zero")]
    ZeroSize(usize),
    #[error("no frames")]
    Empty,
    #[error("unknown codec id {0}")]
    UnknownCodec(u8),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode(series: &FrameSizeSeries) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * series.len());
    out.extend_from_slice(&FSTS_MAGIC);
    out.extend_from_slice(&FSTS_VERSION.to_le_bytes());
    let codec: u16 = match series.codec() {
        None => 0,
        Some(Codec::Avc) => 1,
        Some(Codec::Hevc) => 2,
    };
    out.extend_from_slice(&codec.to_le_bytes());
    out.extend_from_slice(&series.fps().unwrap_or(0.0).to_le_bytes());
    out.extend_from_slice(&(series.len() as u32).to_le_bytes());
    for s in series.sizes() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn decode(data: &[u8]) -> Result<FrameSizeSeries, FstsError> {
    if data.len() < 4 || data[..4] != FSTS_MAGIC {
        return Err(FstsError::BadMagic);
    }
    if data.len() < HEADER_LEN {
        return Err(FstsError::CountMismatch {
            declared: 0,
            actual: 0,
        });
    }
    let u16_at = |i: usize| u16::from_le_bytes([data[i], data[i + 1]]);
    let version = u16_at(4);
    if version != FSTS_VERSION {
        return Err(FstsError::UnsupportedVersion(version));
    }
    let codec = match u16_at(6) & 0xff {
        0 => None,
        1 => Some(Codec::Avc),
        2 => Some(Codec::Hevc),
        other => return Err(FstsError::UnknownCodec(other as u8)),
    };
    let fps = f32::from_le_bytes(data[8..12].try_into().unwrap());
    let count = u32::from_le_bytes(data[12..16].try_into().unwrap()) as u64;
    let payload = &data[HEADER_LEN..];
    if payload.len() % 8 != 0 || payload.len() as u64 / 8 != count {
        return Err(FstsError::CountMismatch {
            declared: count,
            actual: payload.len() as u64 / 8,
        });
    }
    let sizes: Vec<u64> = payload
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if sizes.is_empty() {
        return Err(FstsError::Empty);
    }
    if let Some(i) = sizes.iter().position(|&s| s == 0) {
        return Err(FstsError::ZeroSize(i));
    }
    let mut s = FrameSizeSeries::new(sizes).expect("checked non-empty and positive");
    if let Some(c) = codec {
        s = s.with_codec(c);
    }
    if fps > 0.0 {
        s = s.with_fps(fps);
    }
    Ok(s)
}

pub fn write_fsts(series: &FrameSizeSeries, path: impl AsRef<Path>) -> Result<(), FstsError> {
    fs::write(path, encode(series))?;
    Ok(())
}

/// Reads a file; the series' source id is the path.
pub fn read_fsts(path: impl AsRef<Path>) -> Result<FrameSizeSeries, FstsError> {
    let path = path.as_ref();
    Ok(decode(&fs::read(path)?)?.with_source_id(path.display().to_string()))
}
