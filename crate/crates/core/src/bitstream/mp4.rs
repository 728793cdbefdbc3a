//! ISO-BMFF (MP4) walking for per-sample sizes of the first video track.
//!
//! Plain files carry sizes in `moov/trak/mdia/minf/stbl/stsz` (or `stz2`).
//! Fragmented files carry them in `moof/traf/trun`, with defaults taken from
//! `tfhd` and then `moov/mvex/trex`.

use super::{Codec, ExtractError};
use crate::series::FrameSizeSeries;
use std::fmt;

/// Four-character box type.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct FourCc(pub [u8; 4]);

impl FourCc {
    pub const fn new(s: &[u8; 4]) -> Self {
        FourCc(*s)
    }

    fn is_printable(&self) -> bool {
        self.0.iter().all(|&b| (0x20..0x7f).contains(&b))
    }
}

impl fmt::Display for FourCc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            if (0x20..0x7f).contains(&b) {
                write!(f, "{}", b as char)?;
            } else {
                write!(f, "\\x{b:02x}")?;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for FourCc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FourCc({self})")
    }
}

const MOOV: FourCc = FourCc::new(b"moov");
const TRAK: FourCc = FourCc::new(b"trak");
const TKHD: FourCc = FourCc::new(b"tkhd");
const MDIA: FourCc = FourCc::new(b"mdia");
const MDHD: FourCc = FourCc::new(b"mdhd");
const HDLR: FourCc = FourCc::new(b"hdlr");
const MINF: FourCc = FourCc::new(b"minf");
const STBL: FourCc = FourCc::new(b"stbl");
const STSD: FourCc = FourCc::new(b"stsd");
const STTS: FourCc = FourCc::new(b"stts");
const STSZ: FourCc = FourCc::new(b"stsz");
const STZ2: FourCc = FourCc::new(b"stz2");
const MVEX: FourCc = FourCc::new(b"mvex");
const TREX: FourCc = FourCc::new(b"trex");
const MOOF: FourCc = FourCc::new(b"moof");
const TRAF: FourCc = FourCc::new(b"traf");
const TFHD: FourCc = FourCc::new(b"tfhd");
const TRUN: FourCc = FourCc::new(b"trun");
const MDAT: FourCc = FourCc::new(b"mdat");
const UUID: FourCc = FourCc::new(b"uuid");

/// Header of one box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxHeader {
    pub box_type: FourCc,
    /// Offset of the box's first byte (its size field).
    pub header_offset: usize,
    /// Bytes of size, type, optional largesize and optional uuid.
    pub header_len: usize,
    /// Bytes after the header.
    pub content_size: usize,
    /// 64-bit size form.
    pub is_large: bool,
}

impl BoxHeader {
    pub fn content_offset(&self) -> usize {
        self.header_offset + self.header_len
    }

    pub fn end(&self) -> usize {
        self.content_offset() + self.content_size
    }

    pub fn total_size(&self) -> usize {
        self.header_len + self.content_size
    }
}

/// How per-frame sizes are counted in a container.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mp4SizeMode {
    /// The stored sample sizes only.
    #[default]
    Samples,
    /// Sample sizes plus container bytes: everything outside `mdat`
    /// payloads before the first fragment (or the whole file when not
    /// fragmented) goes to the first frame, and each fragment's `moof` and
    /// `mdat` header bytes go to that fragment's first frame.
    WithOverhead,
}

fn be_u32(d: &[u8], at: usize) -> Option<u32> {
    d.get(at..at + 4).map(|b| u32::from_be_bytes(b.try_into().unwrap()))
}

fn be_u64(d: &[u8], at: usize) -> Option<u64> {
    d.get(at..at + 8).map(|b| u64::from_be_bytes(b.try_into().unwrap()))
}

/// Parses the box header at `offset` within the parent extent ending at
/// `parent_end`. A size of 0 extends the box to the parent end.
pub fn parse_box_header(
    data: &[u8],
    offset: usize,
    parent_end: usize,
) -> Result<BoxHeader, ExtractError> {
    let parent_end = parent_end.min(data.len());
    let size32 = be_u32(data, offset).filter(|_| offset + 8 <= parent_end);
    let Some(size32) = size32 else {
        return Err(ExtractError::TruncatedBox(FourCc(*b"????")));
    };
    let box_type = FourCc(data[offset + 4..offset + 8].try_into().unwrap());
    let (mut header_len, total, is_large) = match size32 {
        0 => (8usize, (parent_end - offset) as u64, false),
        1 => {
            let large = be_u64(data, offset + 8)
                .filter(|_| offset + 16 <= parent_end)
                .ok_or(ExtractError::TruncatedBox(box_type))?;
            (16, large, true)
        }
        n => (8, u64::from(n), false),
    };
    if box_type == UUID {
        header_len += 16;
    }
    if total < header_len as u64 {
        return Err(ExtractError::MalformedBox(box_type, "size smaller than header"));
    }
    if total > (parent_end - offset) as u64 {
        return Err(ExtractError::TruncatedBox(box_type));
    }
    Ok(BoxHeader {
        box_type,
        header_offset: offset,
        header_len,
        content_size: total as usize - header_len,
        is_large,
    })
}

/// Child boxes laid out back to back in `[start, end)`.
fn children(data: &[u8], start: usize, end: usize) -> Result<Vec<BoxHeader>, ExtractError> {
    let mut out = Vec::new();
    let mut at = start;
    while at < end {
        let h = parse_box_header(data, at, end)?;
        at = h.end();
        out.push(h);
    }
    Ok(out)
}

fn child(
    data: &[u8],
    parent: &BoxHeader,
    ty: FourCc,
) -> Result<Option<BoxHeader>, ExtractError> {
    Ok(children(data, parent.content_offset(), parent.end())?
        .into_iter()
        .find(|h| h.box_type == ty))
}

fn content<'a>(data: &'a [u8], h: &BoxHeader) -> &'a [u8] {
    &data[h.content_offset()..h.end()]
}

/// Video track facts gathered from `moov`.
#[derive(Debug, Default)]
struct VideoTrack {
    track_id: u32,
    codec: Option<Codec>,
    timescale: u32,
    sizes: Vec<u64>,
    durations_total: u64,
    durations_count: u64,
}

fn full_box_version(body: &[u8], ty: FourCc) -> Result<u8, ExtractError> {
    body.first()
        .copied()
        .ok_or(ExtractError::MalformedBox(ty, "missing version"))
}

fn read_track(data: &[u8], trak: &BoxHeader) -> Result<Option<VideoTrack>, ExtractError> {
    let Some(mdia) = child(data, trak, MDIA)? else {
        return Ok(None);
    };
    let Some(hdlr) = child(data, &mdia, HDLR)? else {
        return Ok(None);
    };
    let handler = content(data, &hdlr)
        .get(8..12)
        .ok_or(ExtractError::MalformedBox(HDLR, "too short"))?;
    if handler != b"vide" {
        return Ok(None);
    }

    let mut track = VideoTrack::default();
    if let Some(tkhd) = child(data, trak, TKHD)? {
        let body = content(data, &tkhd);
        let at = if full_box_version(body, TKHD)? == 1 { 20 } else { 12 };
        track.track_id = be_u32(body, at).ok_or(ExtractError::MalformedBox(TKHD, "too short"))?;
    }
    if let Some(mdhd) = child(data, &mdia, MDHD)? {
        let body = content(data, &mdhd);
        let at = if full_box_version(body, MDHD)? == 1 { 20 } else { 12 };
        track.timescale = be_u32(body, at).ok_or(ExtractError::MalformedBox(MDHD, "too short"))?;
    }
    let stbl = match child(data, &mdia, MINF)? {
        Some(minf) => child(data, &minf, STBL)?,
        None => None,
    };
    let Some(stbl) = stbl else {
        return Ok(Some(track));
    };
    for h in children(data, stbl.content_offset(), stbl.end())? {
        let body = content(data, &h);
        let short = ExtractError::MalformedBox(h.box_type, "too short");
        match h.box_type {
            STSD => {
                // version/flags, entry_count, then the first entry's size and type
                track.codec = match body.get(12..16) {
                    Some(b"avc1") | Some(b"avc3") => Some(Codec::Avc),
                    Some(b"hvc1") | Some(b"hev1") => Some(Codec::Hevc),
                    _ => None,
                };
            }
            STTS => {
                let n = be_u32(body, 4).ok_or(short.clone())? as usize;
                for k in 0..n {
                    let count = be_u32(body, 8 + 8 * k).ok_or(short.clone())?;
                    let delta = be_u32(body, 12 + 8 * k).ok_or(short.clone())?;
                    track.durations_count += u64::from(count);
                    track.durations_total += u64::from(count) * u64::from(delta);
                }
            }
            STSZ => {
                let uniform = be_u32(body, 4).ok_or(short.clone())?;
                let n = be_u32(body, 8).ok_or(short.clone())? as usize;
                track.sizes = if uniform != 0 {
                    vec![u64::from(uniform); n]
                } else {
                    (0..n)
                        .map(|k| be_u32(body, 12 + 4 * k).map(u64::from).ok_or(short.clone()))
                        .collect::<Result<_, _>>()?
                };
            }
            STZ2 => {
                let field = *body.get(7).ok_or(short.clone())? as usize;
                let n = be_u32(body, 8).ok_or(short.clone())? as usize;
                let table = &body[12.min(body.len())..];
                track.sizes = (0..n)
                    .map(|k| {
                        let v = match field {
                            4 => table.get(k / 2).map(|b| {
                                if k % 2 == 0 {
                                    b >> 4
                                } else {
                                    b & 0x0f
                                }
                                .into()
                            }),
                            8 => table.get(k).map(|&b| b.into()),
                            16 => table
                                .get(2 * k..2 * k + 2)
                                .map(|b| u16::from_be_bytes([b[0], b[1]]).into()),
                            _ => None,
                        };
                        v.ok_or(short.clone())
                    })
                    .collect::<Result<_, _>>()?;
            }
            _ => {}
        }
    }
    Ok(Some(track))
}

/// `trex` defaults per track: (duration, size).
fn read_trex(data: &[u8], moov: &BoxHeader) -> Result<Vec<(u32, u32, u32)>, ExtractError> {
    let Some(mvex) = child(data, moov, MVEX)? else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for h in children(data, mvex.content_offset(), mvex.end())? {
        if h.box_type == TREX {
            let b = content(data, &h);
            let short = ExtractError::MalformedBox(TREX, "too short");
            let id = be_u32(b, 4).ok_or(short.clone())?;
            let dur = be_u32(b, 12).ok_or(short.clone())?;
            let size = be_u32(b, 16).ok_or(short)?;
            out.push((id, dur, size));
        }
    }
    Ok(out)
}

/// Samples of one `traf` for `track_id`: (sizes, total duration).
fn read_traf(
    data: &[u8],
    traf: &BoxHeader,
    track_id: u32,
    trex: Option<(u32, u32)>,
) -> Result<Option<(Vec<u64>, u64)>, ExtractError> {
    let mut default_duration = trex.map(|t| t.0);
    let mut default_size = trex.map(|t| t.1);
    let mut sizes = Vec::new();
    let mut duration = 0u64;
    for h in children(data, traf.content_offset(), traf.end())? {
        let b = content(data, &h);
        let short = ExtractError::MalformedBox(h.box_type, "too short");
        match h.box_type {
            TFHD => {
                let flags = be_u32(b, 0).ok_or(short.clone())? & 0x00ff_ffff;
                if be_u32(b, 4).ok_or(short.clone())? != track_id {
                    return Ok(None);
                }
                let mut at = 8;
                if flags & 0x01 != 0 {
                    at += 8;
                }
                if flags & 0x02 != 0 {
                    at += 4;
                }
                if flags & 0x08 != 0 {
                    default_duration = Some(be_u32(b, at).ok_or(short.clone())?);
                    at += 4;
                }
                if flags & 0x10 != 0 {
                    default_size = Some(be_u32(b, at).ok_or(short.clone())?);
                }
            }
            TRUN => {
                let flags = be_u32(b, 0).ok_or(short.clone())? & 0x00ff_ffff;
                let n = be_u32(b, 4).ok_or(short.clone())? as usize;
                let mut at = 8;
                if flags & 0x001 != 0 {
                    at += 4;
                }
                if flags & 0x004 != 0 {
                    at += 4;
                }
                for _ in 0..n {
                    if flags & 0x100 != 0 {
                        duration += u64::from(be_u32(b, at).ok_or(short.clone())?);
                        at += 4;
                    } else {
                        duration += u64::from(default_duration.unwrap_or(0));
                    }
                    let size = if flags & 0x200 != 0 {
                        let s = be_u32(b, at).ok_or(short.clone())?;
                        at += 4;
                        s
                    } else {
                        default_size.ok_or(ExtractError::MalformedBox(
                            TRUN,
                            "no sample size and no default",
                        ))?
                    };
                    sizes.push(u64::from(size));
                    if flags & 0x400 != 0 {
                        at += 4;
                    }
                    if flags & 0x800 != 0 {
                        at += 4;
                    }
                }
                if at > b.len() {
                    return Err(short);
                }
            }
            _ => {}
        }
    }
    Ok(Some((sizes, duration)))
}

/// Per-frame sizes (bits) of the first video track, in stored order.
pub fn extract_frames_mp4(data: &[u8], mode: Mp4SizeMode) -> Result<FrameSizeSeries, ExtractError> {
    let first = parse_box_header(data, 0, data.len()).map_err(|_| ExtractError::NotMp4)?;
    if !first.box_type.is_printable() || first.total_size() < 8 {
        return Err(ExtractError::NotMp4);
    }
    let top = children(data, 0, data.len())?;
    let moov = top
        .iter()
        .find(|h| h.box_type == MOOV)
        .ok_or(ExtractError::NoVideoTrack)?;

    let mut track = None;
    for trak in children(data, moov.content_offset(), moov.end())? {
        if trak.box_type == TRAK {
            if let Some(t) = read_track(data, &trak)? {
                track = Some(t);
                break;
            }
        }
    }
    let mut track = track.ok_or(ExtractError::NoVideoTrack)?;
    let trex = read_trex(data, moov)?
        .into_iter()
        .find(|t| t.0 == track.track_id)
        .map(|t| (t.1, t.2));

    let mut sizes = std::mem::take(&mut track.sizes);
    // container bytes per frame, for Mp4SizeMode::WithOverhead
    let mut extra = vec![0u64; sizes.len()];
    let mut owed = 0u64;
    let mut seen_moof = false;
    let mut skip_mdat_header = false;
    for (k, h) in top.iter().enumerate() {
        match h.box_type {
            MOOF => {
                if !seen_moof && !extra.is_empty() {
                    extra[0] += std::mem::take(&mut owed);
                }
                seen_moof = true;
                let before = sizes.len();
                for traf in children(data, h.content_offset(), h.end())? {
                    if traf.box_type != TRAF {
                        continue;
                    }
                    if let Some((s, d)) = read_traf(data, &traf, track.track_id, trex)? {
                        track.durations_total += d;
                        track.durations_count += s.len() as u64;
                        sizes.extend(s);
                    }
                }
                extra.resize(sizes.len(), 0);
                owed += h.total_size() as u64;
                skip_mdat_header = top.get(k + 1).is_some_and(|m| m.box_type == MDAT);
                if skip_mdat_header {
                    owed += top[k + 1].header_len as u64;
                }
                if sizes.len() > before {
                    extra[before] += std::mem::take(&mut owed);
                }
            }
            MDAT if skip_mdat_header => skip_mdat_header = false,
            MDAT => owed += h.header_len as u64,
            _ => owed += h.total_size() as u64,
        }
    }
    if sizes.is_empty() {
        return Err(ExtractError::MalformedBox(STSZ, "video track has no samples"));
    }
    let tail = if seen_moof { extra.len() - 1 } else { 0 };
    extra[tail] += owed;
    if mode == Mp4SizeMode::WithOverhead {
        for (s, e) in sizes.iter_mut().zip(&extra) {
            *s += e;
        }
    }
    let mut series = FrameSizeSeries::new(sizes.iter().map(|&s| s.max(1) * 8).collect())
        .expect("non-empty");
    if let Some(c) = track.codec {
        series = series.with_codec(c);
    }
    if track.timescale > 0 && track.durations_total > 0 {
        let fps = track.timescale as f64 * track.durations_count as f64
            / track.durations_total as f64;
        series = series.with_fps(fps as f32);
    }
    Ok(series)
}
