//! Extraction on real x264/x265 encodes, checked against ffmpeg's view of
//! the same files (tests/fixtures/inspector.txt, see regen.sh).

mod common;

use bitcover::bitstream::{
    extract_auto, extract_frames_annexb, extract_frames_mp4, scan_annexb, sniff_codec,
    Mp4SizeMode,
};
use common::*;

#[test]
fn nal_units_match_inspector() {
    let inspected = inspector();
    for (name, codec) in ANNEXB_FIXTURES {
        let data = read_fixture(name);
        let types: Vec<u8> = scan_annexb(&data, codec)
            .unwrap()
            .iter()
            .map(|u| u.nal_type)
            .collect();
        assert_eq!(types, inspected[name].nal_types, "{name}");
    }
}

#[test]
fn frame_sizes_match_inspector_packets() {
    let inspected = inspector();
    for (name, codec) in ANNEXB_FIXTURES {
        let data = read_fixture(name);
        let series = extract_frames_annexb(&data, codec).unwrap();
        let want: Vec<u64> = inspected[name].packets.iter().map(|b| b * 8).collect();
        assert_eq!(series.sizes(), want.as_slice(), "{name}");
        assert_eq!(series.total_bits(), 8 * data.len() as u64, "{name}");
        assert_eq!(series.codec(), Some(codec));
    }
}

#[test]
fn mp4_samples_match_inspector_and_annexb_length() {
    let inspected = inspector();
    for (mp4, annexb) in [
        ("avc_ipp.mp4", "avc_ipp.h264"),
        ("avc_bframes_frag.mp4", "avc_bframes_slices.h264"),
    ] {
        let data = read_fixture(mp4);
        let series = extract_frames_mp4(&data, Mp4SizeMode::Samples).unwrap();
        let want: Vec<u64> = inspected[mp4].packets.iter().map(|b| b * 8).collect();
        assert_eq!(series.sizes(), want.as_slice(), "{mp4}");
        assert_eq!(series.codec(), Some(bitcover::Codec::Avc));
        let fps = series.fps().expect("fps from timing tables");
        assert!((fps - 30.0).abs() < 0.01, "{mp4}: {fps}");

        let raw = read_fixture(annexb);
        let es = extract_frames_annexb(&raw, bitcover::Codec::Avc).unwrap();
        assert_eq!(series.len(), es.len());

        let with = extract_frames_mp4(&data, Mp4SizeMode::WithOverhead).unwrap();
        assert_eq!(with.len(), series.len());
        assert_eq!(with.total_bits(), 8 * data.len() as u64, "{mp4}");
    }
}

#[test]
fn auto_detection() {
    for (name, codec) in ANNEXB_FIXTURES {
        let data = read_fixture(name);
        assert_eq!(sniff_codec(&data).unwrap(), codec, "{name}");
        assert_eq!(
            extract_auto(&data).unwrap(),
            extract_frames_annexb(&data, codec).unwrap()
        );
    }
    let mp4 = read_fixture("avc_ipp.mp4");
    assert_eq!(
        extract_auto(&mp4).unwrap(),
        extract_frames_mp4(&mp4, Mp4SizeMode::Samples).unwrap()
    );
    let err = extract_auto(b"plain text, not a video").unwrap_err().to_string();
    assert!(err.contains("mp4") && err.contains("annex-b"), "{err}");
}

#[test]
fn extraction_is_idempotent() {
    for (name, codec) in ANNEXB_FIXTURES {
        let data = read_fixture(name);
        assert_eq!(
            extract_frames_annexb(&data, codec).unwrap(),
            extract_frames_annexb(&data, codec).unwrap()
        );
    }
}

#[test]
fn truncated_stream_keeps_partial_frame() {
    let data = read_fixture("avc_ipp.h264");
    let cut = &data[..data.len() - 10];
    let series = extract_frames_annexb(cut, bitcover::Codec::Avc).unwrap();
    assert_eq!(series.len(), 30);
    assert_eq!(series.total_bits(), 8 * cut.len() as u64);
}
