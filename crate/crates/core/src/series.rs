//! Frame-size series, labeled datasets and the preprocessing that turns a
//! series into a fixed-length network input.

use crate::bitstream::Codec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("series is empty")]
    Empty,
    #[error("frame {0} has size 0")]
    ZeroSize(usize),
    #[error("series has {len} frames, window needs {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("window length must be at least 1")]
    ZeroWindow,
    #[error("class '{name}' has {count} items, need at least {needed}")]
    ClassTooSmall {
        name: String,
        count: usize,
        needed: usize,
    },
    #[error("class index {index} out of range for {classes} classes")]
    LabelOutOfRange { index: usize, classes: usize },
    #[error("split fractions must be positive and sum to 1")]
    BadFractions,
}

/// Per-frame compressed sizes in bits, in encoding order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSizeSeries {
    sizes: Vec<u64>,
    codec: Option<Codec>,
    fps: Option<f32>,
    source_id: String,
}

impl FrameSizeSeries {
    pub fn new(sizes: Vec<u64>) -> Result<Self, SeriesError> {
        if sizes.is_empty() {
            return Err(SeriesError::Empty);
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(SeriesError::ZeroSize(i));
        }
        Ok(Self {
            sizes,
            codec: None,
            fps: None,
            source_id: String::new(),
        })
    }

    pub fn with_codec(mut self, codec: Codec) -> Self {
        self.codec = Some(codec);
        self
    }

    /// Non-positive or non-finite rates are treated as unknown.
    pub fn with_fps(mut self, fps: f32) -> Self {
        self.fps = (fps.is_finite() && fps > 0.0).then_some(fps);
        self
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn codec(&self) -> Option<Codec> {
        self.codec
    }

    pub fn fps(&self) -> Option<f32> {
        self.fps
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn total_bits(&self) -> u64 {
        self.sizes.iter().sum()
    }

    /// Every size multiplied by `factor` and rounded, floored at one bit.
    pub fn scaled(&self, factor: f64) -> Self {
        let sizes = self
            .sizes
            .iter()
            .map(|&s| ((s as f64 * factor).round() as u64).max(1))
            .collect();
        Self { sizes, ..self.clone() }
    }
}

/// Series paired with class indices into `class_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub items: Vec<(FrameSizeSeries, usize)>,
    pub class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(
        items: Vec<(FrameSizeSeries, usize)>,
        class_names: Vec<String>,
    ) -> Result<Self, SeriesError> {
        let ds = Self { items, class_names };
        if let Some(&(_, index)) = ds.items.iter().find(|(_, c)| *c >= ds.num_classes()) {
            return Err(SeriesError::LabelOutOfRange {
                index,
                classes: ds.num_classes(),
            });
        }
        Ok(ds)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|(_, c)| *c).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for (_, c) in &self.items {
            counts[*c] += 1;
        }
        counts
    }

    /// Fails unless every class holds at least `needed` items.
    pub fn require_per_class(&self, needed: usize) -> Result<(), SeriesError> {
        for (c, &count) in self.class_counts().iter().enumerate() {
            if count < needed {
                return Err(SeriesError::ClassTooSmall {
                    name: self.class_names[c].clone(),
                    count,
                    needed,
                });
            }
        }
        Ok(())
    }

    pub fn shortest(&self) -> Option<usize> {
        self.items.iter().map(|(s, _)| s.len()).min()
    }

    /// Same items with every series rescaled (see [`FrameSizeSeries::scaled`]).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            items: self.items.iter().map(|(s, c)| (s.scaled(factor), *c)).collect(),
            class_names: self.class_names.clone(),
        }
    }
}

/// One-hot vector for `class_index` among `classes`.
pub fn one_hot(class_index: usize, classes: usize) -> Vec<f32> {
    let mut v = vec![0.0; classes];
    v[class_index] = 1.0;
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    #[default]
    ZScore,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowPolicy {
    #[default]
    Prefix,
    RandomOffset { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessSpec {
    pub n_frames: usize,
    pub normalization: Normalization,
    pub window_policy: WindowPolicy,
}

impl PreprocessSpec {
    pub fn prefix(n_frames: usize, normalization: Normalization) -> Self {
        Self {
            n_frames,
            normalization,
            window_policy: WindowPolicy::Prefix,
        }
    }

    /// Window then normalize.
    pub fn apply(&self, series: &FrameSizeSeries) -> Result<Vec<f64>, SeriesError> {
        let x = window(series, self)?;
        Ok(match self.normalization {
            Normalization::ZScore => znorm(&x),
            Normalization::None => x,
        })
    }

    /// [`PreprocessSpec::apply`] over a dataset, returning inputs and labels.
    /// Random windows use a per-item seed derived from the policy seed.
    pub fn apply_all(
        &self,
        ds: &LabeledDataset,
    ) -> Result<(Vec<Vec<f64>>, Vec<usize>), SeriesError> {
        let mut xs = Vec::with_capacity(ds.len());
        for (k, (s, _)) in ds.items.iter().enumerate() {
            let mut spec = *self;
            if let WindowPolicy::RandomOffset { seed } = spec.window_policy {
                spec.window_policy = WindowPolicy::RandomOffset {
                    seed: seed.wrapping_add(k as u64),
                };
            }
            xs.push(spec.apply(s)?);
        }
        Ok((xs, ds.labels()))
    }
}

/// Fixed-length real window of a series.
pub fn window(series: &FrameSizeSeries, spec: &PreprocessSpec) -> Result<Vec<f64>, SeriesError> {
    let n = spec.n_frames;
    if n == 0 {
        return Err(SeriesError::ZeroWindow);
    }
    let len = series.len();
    if len < n {
        return Err(SeriesError::TooShort { len, needed: n });
    }
    let offset = match spec.window_policy {
        WindowPolicy::Prefix => 0,
        WindowPolicy::RandomOffset { seed } => ChaCha8Rng::seed_from_u64(seed).gen_range(0..=len - n),
    };
    Ok(series.sizes()[offset..offset + n]
        .iter()
        .map(|&s| s as f64)
        .collect())
}

/// Zero mean, unit population standard deviation. Constant input (std below
/// 1e-12) maps to all zeros.
pub fn znorm(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / std).collect()
}

/// Seeded stratified train/validation/test split.
///
/// Per class, `round(n * train)` and `round(n * val)` items (at least one of
/// each, leaving at least one for test) are drawn from a shuffled order.
pub fn split(
    ds: &LabeledDataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset), SeriesError> {
    let (ftrain, fval, ftest) = fractions;
    if !(ftrain > 0.0 && fval > 0.0 && ftest > 0.0)
        || (ftrain + fval + ftest - 1.0).abs() > 1e-9
    {
        return Err(SeriesError::BadFractions);
    }
    ds.require_per_class(3)?;

    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (_, c)) in ds.items.iter().enumerate() {
        by_class.entry(*c).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = ((n as f64 * ftrain).round() as usize).clamp(1, n - 2);
        let n_val = ((n as f64 * fval).round() as usize).clamp(1, n - n_train - 1);
        tr.extend_from_slice(&idx[..n_train]);
        va.extend_from_slice(&idx[n_train..n_train + n_val]);
        te.extend_from_slice(&idx[n_train + n_val..]);
    }
    let pick = |mut idx: Vec<usize>| {
        idx.sort_unstable();
        LabeledDataset {
            items: idx.iter().map(|&i| ds.items[i].clone()).collect(),
            class_names: ds.class_names.clone(),
        }
    };
    Ok((pick(tr), pick(va), pick(te)))
}
