//! Seeded synthetic frame-size sequences with GOP structure.
//!
//! Each class is a [`ClassProfile`]: I-frames open every GOP, P or B frames
//! fill it, sizes carry multiplicative lognormal jitter, and random scene
//! changes insert an I-frame and restart the GOP.

use crate::series::{FrameSizeSeries, LabeledDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("invalid profile: {0}")]
    BadProfile(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassProfile {
    /// Frames from one I-frame to the next.
    pub gop_length: usize,
    pub i_size_mean: f64,
    pub p_size_mean: f64,
    /// Unused unless `b_frames` is set.
    pub b_size_mean: f64,
    /// Relative standard deviation of every frame size.
    pub size_jitter: f64,
    /// Per-frame probability that a P or B frame becomes an I-frame.
    pub scene_change_rate: f64,
    /// `IBBPBBP...` instead of `IPPP...`.
    pub b_frames: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    I,
    P,
    B,
}

impl ClassProfile {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::BadProfile(m.into()));
        let means = [self.i_size_mean, self.p_size_mean, self.b_size_mean];
        if means.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return bad("size means must be positive");
        }
        if !(0.0..=0.2).contains(&self.scene_change_rate) {
            return bad("scene_change_rate must be in [0, 0.2]");
        }
        if self.gop_length < 2 {
            return bad("gop_length must be >= 2");
        }
        if !(self.size_jitter >= 0.0 && self.size_jitter.is_finite()) {
            return bad("size_jitter must be >= 0");
        }
        Ok(())
    }

    /// Frame type at a position inside the GOP.
    pub fn kind_at(&self, phase: usize) -> FrameKind {
        match (phase, self.b_frames) {
            (0, _) => FrameKind::I,
            (_, false) => FrameKind::P,
            (p, true) if p % 3 == 0 => FrameKind::P,
            _ => FrameKind::B,
        }
    }

    fn mean_of(&self, kind: FrameKind) -> f64 {
        match kind {
            FrameKind::I => self.i_size_mean,
            FrameKind::P => self.p_size_mean,
            FrameKind::B => self.b_size_mean,
        }
    }
}

/// One clip of `n_frames` sizes in bits, deterministic in `seed`.
pub fn generate(profile: &ClassProfile, n_frames: usize, seed: u64) -> Result<FrameSizeSeries, GenError> {
    profile.validate()?;
    if n_frames < profile.gop_length {
        return Err(GenError::BadProfile(format!(
            "n_frames {n_frames} shorter than gop_length {}",
            profile.gop_length
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Unit-mean lognormal with the requested relative spread.
    let sigma2 = (1.0 + profile.size_jitter * profile.size_jitter).ln();
    let jitter = LogNormal::new(-sigma2 / 2.0, sigma2.sqrt()).unwrap();
    let mut phase = 0;
    let mut sizes = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        let scene_cut = rng.gen::<f64>() < profile.scene_change_rate;
        let factor = jitter.sample(&mut rng);
        if phase != 0 && scene_cut {
            phase = 0;
        }
        let mean = profile.mean_of(profile.kind_at(phase));
        sizes.push(((mean * factor).round() as u64).max(1));
        phase = (phase + 1) % profile.gop_length;
    }
    Ok(FrameSizeSeries::new(sizes).expect("sizes are positive"))
}

/// The eleven benchmark classes. Every pair differs in GOP length, I/P size
/// ratio and scene-change rate.
pub const STANDARD_PROFILES: [ClassProfile; 11] = [
    profile(12, 60_000.0, 6_000.0, 0.0, 0.25, 0.000, false),
    profile(15, 90_000.0, 30_000.0, 15_000.0, 0.30, 0.005, true),
    profile(24, 120_000.0, 8_000.0, 0.0, 0.20, 0.010, false),
    profile(30, 80_000.0, 20_000.0, 8_000.0, 0.35, 0.015, true),
    profile(48, 150_000.0, 5_000.0, 0.0, 0.30, 0.020, false),
    profile(60, 100_000.0, 40_000.0, 0.0, 0.15, 0.025, false),
    profile(8, 44_000.0, 16_000.0, 6_000.0, 0.25, 0.030, true),
    profile(18, 200_000.0, 10_000.0, 4_000.0, 0.40, 0.040, true),
    profile(36, 70_000.0, 14_000.0, 0.0, 0.45, 0.050, false),
    profile(90, 50_000.0, 25_000.0, 12_000.0, 0.20, 0.060, true),
    profile(6, 36_000.0, 3_000.0, 0.0, 0.35, 0.080, false),
];

const fn profile(
    gop_length: usize,
    i_size_mean: f64,
    p_size_mean: f64,
    b_size_mean: f64,
    size_jitter: f64,
    scene_change_rate: f64,
    b_frames: bool,
) -> ClassProfile {
    ClassProfile {
        gop_length,
        i_size_mean,
        p_size_mean,
        b_size_mean: if b_frames { b_size_mean } else { p_size_mean },
        size_jitter,
        scene_change_rate,
        b_frames,
    }
}

/// `n_classes * clips_per_class` clips from the first `n_classes` standard
/// profiles, grouped by class. Clip seeds derive from `seed`, class and
/// clip index, so a clip is the same whatever the other arguments.
pub fn standard_benchmark(
    n_classes: usize,
    clips_per_class: usize,
    n_frames: usize,
    seed: u64,
) -> Result<LabeledDataset, GenError> {
    if !(2..=STANDARD_PROFILES.len()).contains(&n_classes) {
        return Err(GenError::BadProfile(format!("n_classes {n_classes} outside [2, 11]")));
    }
    let jobs: Vec<(usize, usize)> = (0..n_classes)
        .flat_map(|c| (0..clips_per_class).map(move |k| (c, k)))
        .collect();
    let items = jobs
        .par_iter()
        .map(|&(c, k)| {
            let clip_seed = clip_seed(seed, c, k);
            let s = generate(&STANDARD_PROFILES[c], n_frames, clip_seed)?;
            Ok((s.with_source_id(format!("{}_{k:04}", class_name(c))), c))
        })
        .collect::<Result<Vec<_>, GenError>>()?;
    let names = (0..n_classes).map(class_name).collect();
    Ok(LabeledDataset::new(items, names).expect("labels in range"))
}

pub fn class_name(c: usize) -> String {
    format!("class{c:02}")
}

fn clip_seed(seed: u64, class: usize, clip: usize) -> u64 {
    // splitmix64 finalizer over the packed indices.
    let mut z = seed ^ ((class as u64) << 32 | clip as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
