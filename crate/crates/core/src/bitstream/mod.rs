//! Frame-size extraction from compressed video without decoding.
//!
//! Two input layouts are understood: Annex-B elementary streams (H.264 and
//! H.265, start-code delimited) and ISO-BMFF / MP4 containers, both plain
//! (`stsz`) and fragmented (`moof`/`trun`). Either way the result is a
//! [`FrameSizeSeries`] in bits, in stored (encoding) order.

mod annexb;
mod bits;
mod mp4;

pub use annexb::{
    extract_frames_annexb, group_access_units, is_frame_start, is_vcl, scan_annexb,
    AccessUnitSpan, NalUnit,
};
pub use bits::{unescape_rbsp, BitReader};
pub use mp4::{extract_frames_mp4, parse_box_header, BoxHeader, FourCc, Mp4SizeMode};

use crate::series::FrameSizeSeries;
use std::fmt;
use thiserror::Error;

/// Video coding standard of an elementary stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Codec {
    Avc,
    Hevc,
}

impl Codec {
    pub fn name(self) -> &'static str {
        match self {
            Codec::Avc => "avc",
            Codec::Hevc => "hevc",
        }
    }
}

impl fmt::Display for Codec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtractError {
    #[error("annex-b: no start code found")]
    NoStartCode,
    #[error("annex-b: no frames (no VCL NAL units)")]
    NoFrames,
    #[error("exp-golomb: malformed code ({0})")]
    MalformedCode(&'static str),
    #[error("mp4: not an ISO-BMFF file")]
    NotMp4,
    #[error("mp4: no video track")]
    NoVideoTrack,
    #[error("mp4: box '{0}' extends past its parent")]
    TruncatedBox(FourCc),
    #[error("mp4: malformed '{0}' box: {1}")]
    MalformedBox(FourCc, &'static str),
}

/// Guesses the codec of an Annex-B stream from the header of its first NAL.
///
/// HEVC headers are two bytes with `nuh_layer_id` mostly zero and a
/// `nuh_temporal_id_plus1` of at least one; the parameter-set types 32..=34
/// and IRAP types 16..=21 are what a well-formed stream starts with.
pub fn sniff_codec(stream: &[u8]) -> Result<Codec, ExtractError> {
    let units = scan_annexb(stream, Codec::Avc)?;
    let first = &units[0];
    let payload = &stream[first.payload_offset..first.payload_offset + first.payload_size];
    if payload.len() >= 2 {
        let hevc_type = (payload[0] >> 1) & 0x3f;
        let tid = payload[1] & 0x07;
        let layer_hi = payload[0] & 1;
        if tid >= 1
            && layer_hi == 0
            && (matches!(hevc_type, 32..=35) || matches!(hevc_type, 16..=21))
        {
            return Ok(Codec::Hevc);
        }
    }
    Ok(Codec::Avc)
}

/// Failure of [`extract_auto`].
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DetectError {
    /// The buffer starts with a valid box but the MP4 walk failed.
    #[error("{0}")]
    Mp4(ExtractError),
    #[error("not mp4 ({mp4}); not annex-b ({annexb})")]
    Neither {
        mp4: ExtractError,
        annexb: ExtractError,
    },
}

/// Extracts per-frame sizes from a buffer whose layout is unknown: MP4 when
/// the first box parses, otherwise Annex-B with the codec sniffed from the
/// first NAL header.
pub fn extract_auto(data: &[u8]) -> Result<FrameSizeSeries, DetectError> {
    match extract_frames_mp4(data, Mp4SizeMode::Samples) {
        Ok(s) => Ok(s),
        Err(ExtractError::NotMp4) => sniff_codec(data)
            .and_then(|codec| extract_frames_annexb(data, codec))
            .map_err(|annexb| DetectError::Neither {
                mp4: ExtractError::NotMp4,
                annexb,
            }),
        Err(e) => Err(DetectError::Mp4(e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sniff_avc_and_hevc() {
        assert_eq!(
            sniff_codec(&[0, 0, 0, 1, 0x67, 0x42, 0, 0, 1, 0x65, 0x88]).unwrap(),
            Codec::Avc
        );
        // VPS header: type 32 -> 0x40 0x01
        assert_eq!(
            sniff_codec(&[0, 0, 0, 1, 0x40, 0x01, 0x0c, 0, 0, 1, 0x26, 0x01, 0xaf]).unwrap(),
            Codec::Hevc
        );
    }
}

