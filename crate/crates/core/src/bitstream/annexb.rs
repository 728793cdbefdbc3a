//! Annex-B start-code scanning and access-unit grouping.

use super::bits::{unescape_rbsp, BitReader};
use super::{Codec, ExtractError};
use crate::series::FrameSizeSeries;
use log::warn;

/// One NAL unit located in an Annex-B stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NalUnit {
    /// Offset of the first byte after the start code.
    pub payload_offset: usize,
    /// Payload length in bytes, start code and trailing zero bytes excluded.
    pub payload_size: usize,
    /// Bytes between the end of the previous payload (or the stream start)
    /// and this payload: the start code plus any zero padding before it.
    pub prefix_len: usize,
    pub nal_type: u8,
    pub codec: Codec,
    /// Set when the forbidden_zero_bit is 1.
    pub forbidden_bit: bool,
}

impl NalUnit {
    /// Offset where this unit's region (prefix included) begins.
    pub fn region_start(&self) -> usize {
        self.payload_offset - self.prefix_len
    }

    pub fn payload_end(&self) -> usize {
        self.payload_offset + self.payload_size
    }

    pub fn header_len(&self) -> usize {
        match self.codec {
            Codec::Avc => 1,
            Codec::Hevc => 2,
        }
    }
}

/// Contiguous run of NAL units forming one coded frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessUnitSpan {
    pub first_nal_index: usize,
    pub last_nal_index: usize,
    pub total_bits: u64,
}

/// Finds every 3- and 4-byte start code and returns the units between them.
pub fn scan_annexb(stream: &[u8], codec: Codec) -> Result<Vec<NalUnit>, ExtractError> {
    // payload start offsets, one per `00 00 01`
    let mut starts = Vec::new();
    let mut i = 2;
    while i < stream.len() {
        match stream[i] {
            1 if stream[i - 1] == 0 && stream[i - 2] == 0 => {
                starts.push(i + 1);
                i += 3;
            }
            // neither this byte nor the next can end a start code
            b if b > 1 => i += 3,
            _ => i += 1,
        }
    }
    if starts.is_empty() {
        return Err(ExtractError::NoStartCode);
    }

    let mut units: Vec<NalUnit> = Vec::with_capacity(starts.len());
    let mut region_start = 0usize;
    for (k, &payload_offset) in starts.iter().enumerate() {
        let mut end = match starts.get(k + 1) {
            Some(&next) => next - 3,
            None => stream.len(),
        };
        while end > payload_offset && stream[end - 1] == 0 {
            end -= 1;
        }
        let payload_size = end - payload_offset;
        if payload_size == 0 {
            // Start code with nothing after it (stream cut or padding). Its
            // bytes fall into the next unit's prefix, or the stream tail.
            warn!("empty NAL unit at offset {payload_offset}");
            continue;
        }
        let header = stream[payload_offset];
        let nal_type = match codec {
            Codec::Avc => header & 0x1f,
            Codec::Hevc => (header >> 1) & 0x3f,
        };
        let forbidden_bit = header & 0x80 != 0;
        if forbidden_bit {
            warn!("forbidden_zero_bit set in NAL unit at offset {payload_offset}");
        }
        units.push(NalUnit {
            payload_offset,
            payload_size,
            prefix_len: payload_offset - region_start,
            nal_type,
            codec,
            forbidden_bit,
        });
        region_start = end;
    }
    if units.is_empty() {
        return Err(ExtractError::NoStartCode);
    }
    Ok(units)
}

/// Coded-slice units: AVC types 1..=5, HEVC types 0..=31.
pub fn is_vcl(codec: Codec, nal_type: u8) -> bool {
    match codec {
        Codec::Avc => (1..=5).contains(&nal_type),
        Codec::Hevc => nal_type <= 31,
    }
}

fn is_aud(codec: Codec, nal_type: u8) -> bool {
    match codec {
        Codec::Avc => nal_type == 9,
        Codec::Hevc => nal_type == 35,
    }
}

/// Non-VCL types that may open an access unit. The remaining ones (end of
/// sequence/stream, filler, suffix SEI) trail the picture they follow.
fn opens_access_unit(codec: Codec, nal_type: u8) -> bool {
    match codec {
        Codec::Avc => matches!(nal_type, 6..=9 | 14..=18),
        Codec::Hevc => matches!(nal_type, 32..=35 | 39 | 41..=44 | 48..=55),
    }
}

/// Whether a VCL unit carries the first slice of a new picture.
///
/// `payload` is the unit's bytes, header included.
pub fn is_frame_start(nal: &NalUnit, payload: &[u8]) -> Result<bool, ExtractError> {
    let body = payload.get(nal.header_len()..).unwrap_or(&[]);
    match nal.codec {
        Codec::Avc => {
            // ue(v) with 32 leading zeros needs 65 bits; allow for escapes
            let head = unescape_rbsp(&body[..body.len().min(16)]);
            let first_mb_in_slice = BitReader::new(&head).read_ue()?;
            Ok(first_mb_in_slice == 0)
        }
        Codec::Hevc => {
            let b = body
                .first()
                .ok_or(ExtractError::MalformedCode("bits exhausted"))?;
            Ok(b & 0x80 != 0)
        }
    }
}

/// Groups NAL units into access units.
///
/// A VCL unit that starts a picture opens a new unit; so does an access-unit
/// delimiter. Non-VCL units between two pictures join the later one when
/// they are of a kind that can open an access unit, and everything from the
/// first such unit onwards goes with it.
pub fn group_access_units(
    stream: &[u8],
    units: &[NalUnit],
) -> Result<Vec<AccessUnitSpan>, ExtractError> {
    let Some(codec) = units.first().map(|u| u.codec) else {
        return Err(ExtractError::NoFrames);
    };
    let mut starts = vec![0usize];
    let mut current_has_vcl = false;
    let mut any_vcl = false;
    let mut pending: Option<usize> = None;

    for (i, nal) in units.iter().enumerate() {
        if is_vcl(codec, nal.nal_type) {
            let payload = &stream[nal.payload_offset..nal.payload_end()];
            let starts_picture = match is_frame_start(nal, payload) {
                Ok(v) => v,
                Err(e) if i + 1 == units.len() => {
                    warn!("truncated final slice at offset {}: {e}", nal.payload_offset);
                    false
                }
                Err(e) => return Err(e),
            };
            if current_has_vcl && starts_picture {
                starts.push(pending.unwrap_or(i));
            }
            current_has_vcl = true;
            any_vcl = true;
            pending = None;
        } else {
            if current_has_vcl && pending.is_none() && opens_access_unit(codec, nal.nal_type) {
                pending = Some(i);
            }
            if current_has_vcl && is_aud(codec, nal.nal_type) {
                starts.push(pending.take().unwrap_or(i));
                current_has_vcl = false;
            }
        }
    }
    if !any_vcl {
        return Err(ExtractError::NoFrames);
    }
    // a trailing AUD with no picture after it
    if !current_has_vcl && starts.len() > 1 {
        starts.pop();
    }

    let spans = starts
        .iter()
        .enumerate()
        .map(|(k, &first)| {
            let last = starts.get(k + 1).map_or(units.len(), |&n| n) - 1;
            let begin = if k == 0 { 0 } else { units[first].region_start() };
            let end = match starts.get(k + 1) {
                Some(&n) => units[n].region_start(),
                None => stream.len(),
            };
            AccessUnitSpan {
                first_nal_index: first,
                last_nal_index: last,
                total_bits: 8 * (end - begin) as u64,
            }
        })
        .collect();
    Ok(spans)
}

/// Per-frame sizes of an Annex-B stream.
///
/// Each frame's size covers every byte from its access unit's first start
/// code up to the next access unit's, so the sizes add up to the stream
/// length (leading bytes before the first start code go to the first frame,
/// anything after the last payload to the last).
pub fn extract_frames_annexb(stream: &[u8], codec: Codec) -> Result<FrameSizeSeries, ExtractError> {
    let units = scan_annexb(stream, codec)?;
    let spans = group_access_units(stream, &units)?;
    let sizes = spans.iter().map(|s| s.total_bits).collect();
    Ok(FrameSizeSeries::new(sizes)
        .expect("access units are non-empty")
        .with_codec(codec))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sc4() -> Vec<u8> {
        vec![0, 0, 0, 1]
    }

    #[test]
    fn two_units() {
        let s = [0, 0, 0, 1, 0x67, 0x42, 0, 0, 1, 0x65, 0x88, 0x84];
        let units = scan_annexb(&s, Codec::Avc).unwrap();
        assert_eq!(units.len(), 2);
        assert_eq!((units[0].nal_type, units[0].payload_size), (7, 2));
        assert_eq!((units[1].nal_type, units[1].payload_size), (5, 3));
        assert_eq!(units[0].prefix_len, 4);
        assert_eq!(units[1].prefix_len, 3);
    }

    #[test]
    fn no_start_code() {
        assert_eq!(scan_annexb(&[0xff; 3], Codec::Avc), Err(ExtractError::NoStartCode));
        assert_eq!(scan_annexb(&[], Codec::Avc), Err(ExtractError::NoStartCode));
        assert_eq!(scan_annexb(&[0, 0, 1], Codec::Avc), Err(ExtractError::NoStartCode));
    }

    #[test]
    fn trailing_zeros_go_to_next_prefix() {
        let s = [0, 0, 1, 0x67, 0xAA, 0, 0, 0, 0, 0, 1, 0x68, 0xBB];
        let units = scan_annexb(&s, Codec::Avc).unwrap();
        assert_eq!(units[0].payload_size, 2);
        assert_eq!(units[1].prefix_len, 6);
        assert_eq!(units[1].region_start(), 5);
    }

    #[test]
    fn forbidden_bit_reported() {
        let s = [0, 0, 1, 0xE5, 0x88];
        let units = scan_annexb(&s, Codec::Avc).unwrap();
        assert!(units[0].forbidden_bit);
        assert_eq!(units[0].nal_type, 5);
    }

    #[test]
    fn hevc_header_type() {
        // IDR_W_RADL = 19: (19 << 1) = 0x26, then 0x01
        let s = [0, 0, 1, 0x26, 0x01, 0xAF];
        let units = scan_annexb(&s, Codec::Hevc).unwrap();
        assert_eq!(units[0].nal_type, 19);
        assert_eq!(units[0].header_len(), 2);
    }

    #[test]
    fn frame_start_avc() {
        let nal = NalUnit {
            payload_offset: 0,
            payload_size: 2,
            prefix_len: 0,
            nal_type: 1,
            codec: Codec::Avc,
            forbidden_bit: false,
        };
        assert!(is_frame_start(&nal, &[0x41, 0b1000_0000]).unwrap());
        assert!(!is_frame_start(&nal, &[0x41, 0b0100_0000]).unwrap());
    }

    #[test]
    fn frame_start_hevc() {
        let nal = NalUnit {
            payload_offset: 0,
            payload_size: 3,
            prefix_len: 0,
            nal_type: 1,
            codec: Codec::Hevc,
            forbidden_bit: false,
        };
        assert!(is_frame_start(&nal, &[0x02, 0x01, 0x80]).unwrap());
        assert!(!is_frame_start(&nal, &[0x02, 0x01, 0x7f]).unwrap());
    }

    fn push_unit(s: &mut Vec<u8>, header: u8, body_first: u8, len: usize) {
        s.extend(sc4());
        s.push(header);
        s.push(body_first);
        s.extend(std::iter::repeat(0x55).take(len - 2));
    }

    #[test]
    fn size_attribution() {
        let mut s = Vec::new();
        push_unit(&mut s, 0x67, 0x42, 10); // SPS
        push_unit(&mut s, 0x65, 0x88, 100); // IDR, first_mb 0
        push_unit(&mut s, 0x41, 0x9A, 40); // P, first_mb 0
        let series = extract_frames_annexb(&s, Codec::Avc).unwrap();
        assert_eq!(series.sizes(), &[(4 + 10 + 4 + 100) * 8, (4 + 40) * 8]);
    }

    #[test]
    fn multi_slice_picture_stays_together() {
        let mut s = Vec::new();
        push_unit(&mut s, 0x65, 0x88, 20); // first_mb 0
        push_unit(&mut s, 0x65, 0x4A, 20); // "010" -> first_mb 1
        push_unit(&mut s, 0x41, 0x9A, 20);
        let series = extract_frames_annexb(&s, Codec::Avc).unwrap();
        assert_eq!(series.sizes(), &[48 * 8, 24 * 8]);
    }

    #[test]
    fn aud_forces_boundary() {
        let mut s = Vec::new();
        push_unit(&mut s, 0x65, 0x88, 20);
        push_unit(&mut s, 0x09, 0xF0, 2); // AUD
        push_unit(&mut s, 0x41, 0x4A, 20); // first_mb 1, still a new AU
        let series = extract_frames_annexb(&s, Codec::Avc).unwrap();
        assert_eq!(series.sizes(), &[24 * 8, 30 * 8]);
    }

    #[test]
    fn single_frame_is_whole_file() {
        let mut s = vec![0xAA, 0xBB];
        push_unit(&mut s, 0x67, 0x42, 6);
        push_unit(&mut s, 0x65, 0x88, 30);
        s.extend([0, 0, 0]);
        let series = extract_frames_annexb(&s, Codec::Avc).unwrap();
        assert_eq!(series.sizes(), &[8 * s.len() as u64]);
    }

    #[test]
    fn no_frames() {
        let mut s = Vec::new();
        push_unit(&mut s, 0x67, 0x42, 6);
        push_unit(&mut s, 0x68, 0xCE, 4);
        assert_eq!(extract_frames_annexb(&s, Codec::Avc), Err(ExtractError::NoFrames));
    }

    #[test]
    fn truncated_final_slice_kept() {
        let mut s = Vec::new();
        push_unit(&mut s, 0x65, 0x88, 20);
        s.extend([0, 0, 0, 1, 0x41, 0x00]); // cut inside the slice header
        let series = extract_frames_annexb(&s, Codec::Avc).unwrap();
        assert_eq!(series.len(), 1);
        assert_eq!(series.total_bits(), 8 * s.len() as u64);
    }
}
