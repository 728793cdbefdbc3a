//! Dynamic time warping distance and a k-nearest-neighbour classifier on it.

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DtwError {
    #[error("empty input")]
    EmptyInput,
    #[error("lengths {0} and {1} differ by more than the band radius {2}")]
    BandInfeasible(usize, usize, usize),
    #[error("no training items")]
    EmptyDataset,
    #[error("k = {k} with {n} training items")]
    BadK { k: usize, n: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DtwConfig {
    /// Sakoe-Chiba band radius; `None` searches the full matrix.
    pub window: Option<usize>,
}

/// DTW with L1 point cost, keeping two rows of the shorter series' length.
pub fn dtw_distance(a: &[f64], b: &[f64], cfg: DtwConfig) -> Result<f64, DtwError> {
    if a.is_empty() || b.is_empty() {
        return Err(DtwError::EmptyInput);
    }
    if let Some(w) = cfg.window {
        if a.len().abs_diff(b.len()) > w {
            return Err(DtwError::BandInfeasible(a.len(), b.len(), w));
        }
    }
    // Rows run over the longer series, columns over the shorter.
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let m = short.len();
    let w = cfg.window.unwrap_or(usize::MAX);
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for (i, &x) in long.iter().enumerate() {
        let lo = i.saturating_sub(w);
        let hi = i.saturating_add(w).min(m - 1);
        cur.fill(f64::INFINITY);
        for j in lo..=hi {
            let cost = (x - short[j]).abs();
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = prev[j];
                let left = if j > 0 { cur[j - 1] } else { f64::INFINITY };
                let diag = if j > 0 { prev[j - 1] } else { f64::INFINITY };
                up.min(left).min(diag)
            };
            cur[j] = cost + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Full accumulated-cost matrix; quadratic memory, for inspection and tests.
pub fn dtw_matrix(a: &[f64], b: &[f64]) -> Result<Vec<Vec<f64>>, DtwError> {
    if a.is_empty() || b.is_empty() {
        return Err(DtwError::EmptyInput);
    }
    let mut d = vec![vec![f64::INFINITY; b.len()]; a.len()];
    for i in 0..a.len() {
        for j in 0..b.len() {
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => d[0][j - 1],
                (_, 0) => d[i - 1][0],
                _ => d[i - 1][j].min(d[i][j - 1]).min(d[i - 1][j - 1]),
            };
            d[i][j] = (a[i] - b[j]).abs() + best;
        }
    }
    Ok(d)
}

/// Majority label among the `k` nearest training series.
///
/// Distance ties go to the earlier training index and vote ties to the
/// smaller class index. Distances are computed in parallel but the result
/// does not depend on scheduling.
pub fn knn_classify(
    train_xs: &[Vec<f64>],
    train_ys: &[usize],
    query: &[f64],
    k: usize,
    cfg: DtwConfig,
) -> Result<usize, DtwError> {
    assert_eq!(train_xs.len(), train_ys.len());
    if train_xs.is_empty() {
        return Err(DtwError::EmptyDataset);
    }
    if k == 0 || k > train_xs.len() {
        return Err(DtwError::BadK { k, n: train_xs.len() });
    }
    let dists = train_xs
        .par_iter()
        .map(|t| dtw_distance(query, t, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let mut order: Vec<usize> = (0..dists.len()).collect();
    order.sort_by(|&i, &j| dists[i].total_cmp(&dists[j]).then(i.cmp(&j)));
    let n_classes = train_ys.iter().max().unwrap() + 1;
    let mut votes = vec![0usize; n_classes];
    for &i in &order[..k] {
        votes[train_ys[i]] += 1;
    }
    let top = *votes.iter().max().unwrap();
    Ok(votes.iter().position(|&v| v == top).unwrap())
}

/// [`knn_classify`] for every query.
pub fn knn_classify_all(
    train_xs: &[Vec<f64>],
    train_ys: &[usize],
    queries: &[Vec<f64>],
    k: usize,
    cfg: DtwConfig,
) -> Result<Vec<usize>, DtwError> {
    queries
        .iter()
        .map(|q| knn_classify(train_xs, train_ys, q, k, cfg))
        .collect()
}
