//! Frame-size histograms and Kullback-Leibler divergence between classes.

use crate::series::LabeledDataset;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const DEFAULT_BINS: usize = 64;
pub const DEFAULT_EPSILON: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("no samples")]
    EmptyInput,
    #[error("bin edges must be strictly ascending with at least two entries")]
    BadEdges,
    #[error("histograms have different bin edges")]
    BinMismatch,
    #[error("class '{name}' has {count} items, need at least {needed}")]
    ClassTooSmall { name: String, count: usize, needed: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeHistogram {
    pub bin_edges: Vec<f64>,
    pub probs: Vec<f64>,
}

/// `bins` equal-width edges spanning `[lo, hi]`. A degenerate range is widened
/// by one unit so the edges stay strictly ascending.
pub fn equal_width_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let bins = bins.max(1);
    let hi = if hi > lo { hi } else { lo + 1.0 };
    let w = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| lo + w * i as f64).collect();
    edges.push(hi);
    edges
}

/// Normalized counts. Values outside the edge range land in the end bins;
/// a value on an interior edge belongs to the bin it opens.
pub fn histogram(sizes: &[f64], bin_edges: &[f64]) -> Result<SizeHistogram, StatsError> {
    if bin_edges.len() < 2 || bin_edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(StatsError::BadEdges);
    }
    if sizes.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let bins = bin_edges.len() - 1;
    let mut counts = vec![0u64; bins];
    for &s in sizes {
        // Number of interior edges <= s.
        let k = bin_edges[1..bins].partition_point(|&e| e <= s);
        counts[k] += 1;
    }
    let n = sizes.len() as f64;
    Ok(SizeHistogram {
        bin_edges: bin_edges.to_vec(),
        probs: counts.iter().map(|&c| c as f64 / n).collect(),
    })
}

/// KL(p || q) in nats after adding `epsilon` to every bin and renormalizing.
pub fn kld(p: &SizeHistogram, q: &SizeHistogram, epsilon: f64) -> Result<f64, StatsError> {
    if p.bin_edges != q.bin_edges || p.probs.len() != q.probs.len() {
        return Err(StatsError::BinMismatch);
    }
    let smooth = |h: &SizeHistogram| {
        let total: f64 = h.probs.iter().map(|v| v + epsilon).sum();
        h.probs.iter().map(|v| (v + epsilon) / total).collect::<Vec<_>>()
    };
    let (ps, qs) = (smooth(p), smooth(q));
    let d: f64 = ps
        .iter()
        .zip(&qs)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum();
    // Rounding can leave a tiny negative value for near-identical inputs.
    Ok(d.max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KldMatrix {
    pub class_names: Vec<String>,
    /// `values[i][j]` = KL(class i || class j); the diagonal is split-half.
    pub values: Vec<Vec<f64>>,
}

impl KldMatrix {
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.values.len()).map(|i| self.values[i][i]).collect()
    }

    pub fn off_diagonal(&self) -> Vec<f64> {
        let n = self.values.len();
        (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.values[i][j])
            .collect()
    }

    pub fn median_intra(&self) -> f64 {
        median(&self.diagonal())
    }

    /// NaN for a single class.
    pub fn median_inter(&self) -> f64 {
        median(&self.off_diagonal())
    }
}

/// Median with the mean of the middle pair for even lengths; NaN when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Inter- and intra-class divergences of pooled frame sizes.
///
/// Every class histogram shares `bins` equal-width bins over the global
/// range. The diagonal compares two halves of a seeded shuffle of the
/// class's pooled sizes.
pub fn class_kld_matrix(ds: &LabeledDataset, bins: usize, seed: u64) -> Result<KldMatrix, StatsError> {
    let c = ds.num_classes();
    let counts = ds.class_counts();
    if let Some(k) = (0..c).find(|&k| counts[k] < 2) {
        return Err(StatsError::ClassTooSmall {
            name: ds.class_names[k].clone(),
            count: counts[k],
            needed: 2,
        });
    }
    let mut pooled: Vec<Vec<f64>> = vec![Vec::new(); c];
    for (s, y) in &ds.items {
        pooled[*y].extend(s.sizes().iter().map(|&v| v as f64));
    }
    let all = pooled.iter().flatten();
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let edges = equal_width_edges(lo, hi, bins);

    let hists = pooled
        .iter()
        .map(|p| histogram(p, &edges))
        .collect::<Result<Vec<_>, _>>()?;
    let mut values = vec![vec![0.0; c]; c];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..c {
        for j in 0..c {
            if i != j {
                values[i][j] = kld(&hists[i], &hists[j], DEFAULT_EPSILON)?;
            }
        }
        let mut shuffled = pooled[i].clone();
        shuffled.shuffle(&mut rng);
        let (a, b) = shuffled.split_at(shuffled.len() / 2);
        values[i][i] = kld(&histogram(a, &edges)?, &histogram(b, &edges)?, DEFAULT_EPSILON)?;
    }
    Ok(KldMatrix {
        class_names: ds.class_names.clone(),
        values,
    })
}
