#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn read_fixture(name: &str) -> Vec<u8> {
    std::fs::read(fixture(name)).unwrap()
}

/// What the independent inspector (ffmpeg's framemd5 muxer and
/// trace_headers filter) reported for a fixture.
#[derive(Debug, Default, Clone)]
pub struct Inspected {
    pub packets: Vec<u64>,
    pub nal_types: Vec<u8>,
}

pub fn inspector() -> HashMap<String, Inspected> {
    let text = std::fs::read_to_string(fixture("inspector.txt")).unwrap();
    let mut out: HashMap<String, Inspected> = HashMap::new();
    let mut current = String::new();
    for line in text.lines() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("file") => {
                current = parts.next().unwrap().to_string();
                out.entry(current.clone()).or_default();
            }
            Some("packets") => {
                out.get_mut(&current).unwrap().packets = parts.map(|v| v.parse().unwrap()).collect()
            }
            Some("nal_types") => {
                out.get_mut(&current).unwrap().nal_types =
                    parts.map(|v| v.parse().unwrap()).collect()
            }
            _ => {}
        }
    }
    out
}

pub const ANNEXB_FIXTURES: [(&str, bitcover::Codec); 3] = [
    ("avc_ipp.h264", bitcover::Codec::Avc),
    ("avc_bframes_slices.h264", bitcover::Codec::Avc),
    ("hevc_small.265", bitcover::Codec::Hevc),
];
