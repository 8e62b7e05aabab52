//! Intensity indicators: Moran's I (the spatial intensity component) and the
//! non-spatial or anomaly-detector baselines it is compared against.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Wafermap;
use crate::rng::{stream, StreamRng};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Adjacency {
    /// 4-neighbourhood.
    #[default]
    Rook,
    /// 8-neighbourhood.
    Queen,
}

impl Adjacency {
    fn offsets(self) -> &'static [(isize, isize)] {
        // forward half of each neighbourhood; pairs are counted in both directions below
        match self {
            Adjacency::Rook => &[(1, 0), (0, 1)],
            Adjacency::Queen => &[(1, 0), (0, 1), (1, 1), (-1, 1)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntensityMethod {
    HfMoran,
    Yfail,
    Dpat,
    Lof,
    Iso,
}

impl IntensityMethod {
    pub fn name(self) -> &'static str {
        match self {
            IntensityMethod::HfMoran => "hf",
            IntensityMethod::Yfail => "yfail",
            IntensityMethod::Dpat => "dpat",
            IntensityMethod::Lof => "lof",
            IntensityMethod::Iso => "iso",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hf" | "moran" | "hf-moran" => Ok(IntensityMethod::HfMoran),
            "yfail" => Ok(IntensityMethod::Yfail),
            "dpat" => Ok(IntensityMethod::Dpat),
            "lof" => Ok(IntensityMethod::Lof),
            "iso" => Ok(IntensityMethod::Iso),
            other => Err(Error::InvalidConfig(format!("unknown intensity method `{other}`"))),
        }
    }
}

/// A score with orientation higher = worse. Only `HfMoran` is in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityResult {
    pub method: IntensityMethod,
    pub score: f64,
}

/// Global Moran's I over masked-in cells with binary adjacency weights:
///
/// `I = (N / W) * sum_ij w_ij (x_i - m)(x_j - m) / sum_i (x_i - m)^2`
///
/// where `W` counts ordered adjacent pairs.
pub fn morans_i(w: &Wafermap, adjacency: Adjacency) -> Result<f64> {
    let vals = w.masked_values();
    if vals.len() < 2 {
        return Err(Error::FewerThanTwoMaskedCells(vals.len()));
    }
    let (lo, hi) = vals
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if lo == hi {
        return Err(Error::ZeroVariance);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let denom: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum();

    let mut cross = 0.0;
    let mut pairs = 0usize;
    for y in 0..w.height() {
        for x in 0..w.width() {
            if !w.is_in(x as isize, y as isize) {
                continue;
            }
            let di = w.value(x, y) - mean;
            for &(dx, dy) in adjacency.offsets() {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if w.is_in(nx, ny) {
                    cross += di * (w.value(nx as usize, ny as usize) - mean);
                    pairs += 1;
                }
            }
        }
    }
    if pairs == 0 {
        return Err(Error::NoAdjacentPairs);
    }
    // each unordered pair stands for two ordered ones
    let weight_sum = 2.0 * pairs as f64;
    Ok((n / weight_sum) * (2.0 * cross) / denom)
}

/// Intensity component in `[0, 1]`: Moran's I (rook) with negatives clamped
/// to zero.
pub fn intensity_score(w: &Wafermap) -> Result<f64> {
    Ok(morans_i(w, Adjacency::Rook)?.clamp(0.0, 1.0))
}

/// Fraction of masked-in cells outside `[spec_lo, spec_hi]`.
pub fn yield_loss(w: &Wafermap, spec_lo: f64, spec_hi: f64) -> Result<f64> {
    if !(spec_lo < spec_hi) {
        return Err(Error::InvalidSpecLimits { lo: spec_lo, hi: spec_hi });
    }
    let vals = w.masked_values();
    let out = vals.iter().filter(|&&v| v < spec_lo || v > spec_hi).count();
    Ok(out as f64 / vals.len() as f64)
}

pub const DPAT_DEFAULT_K: f64 = 6.0;

/// Dynamic part-average testing indicator: the fraction of masked-in cells
/// outside `median +- k * IQR / 1.349` of the same wafer. A zero IQR flags
/// nothing.
pub fn dpat_score(w: &Wafermap, k: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::InvalidConfig(format!("dpat k must be positive, got {k}")));
    }
    let vals = w.masked_values();
    if vals.len() < 4 {
        return Err(Error::TooFewCells { needed: 4, got: vals.len() });
    }
    let sorted = stats::sorted_copy(&vals);
    let med = stats::quantile_sorted(&sorted, 0.5);
    let iqr = stats::quantile_sorted(&sorted, 0.75) - stats::quantile_sorted(&sorted, 0.25);
    if iqr <= 0.0 {
        return Ok(0.0);
    }
    let half_width = k * iqr / 1.349;
    let out = vals.iter().filter(|&&v| (v - med).abs() > half_width).count();
    Ok(out as f64 / vals.len() as f64)
}

/// Per-wafer summary vector fed to LOF and isolation forest:
/// `(mean, sd, median, IQR, yield loss, raw Moran's I)` of masked-in values.
/// A constant wafer has Moran's I recorded as 0.
pub fn wafer_summary(w: &Wafermap, spec_lo: f64, spec_hi: f64) -> Result<Vec<f64>> {
    let vals = w.masked_values();
    let sorted = stats::sorted_copy(&vals);
    let moran = match morans_i(w, Adjacency::Rook) {
        Ok(i) => i,
        Err(Error::ZeroVariance) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(vec![
        stats::mean(&vals),
        stats::sample_sd(&vals),
        stats::quantile_sorted(&sorted, 0.5),
        stats::quantile_sorted(&sorted, 0.75) - stats::quantile_sorted(&sorted, 0.25),
        yield_loss(w, spec_lo, spec_hi)?,
        moran,
    ])
}

/// Column-wise z-scoring; constant columns map to 0.
pub fn standardize(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if points.is_empty() {
        return Vec::new();
    }
    let d = points[0].len();
    let mut out = points.to_vec();
    for j in 0..d {
        let col: Vec<f64> = points.iter().map(|p| p[j]).collect();
        let m = stats::mean(&col);
        let sd = stats::sample_sd(&col);
        for p in out.iter_mut() {
            p[j] = if sd > 0.0 { (p[j] - m) / sd } else { 0.0 };
        }
    }
    out
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Local outlier factor fitted on a point set; every point is scored against
/// the rest.
#[derive(Debug, Clone)]
pub struct LocalOutlierFactor {
    scores: Vec<f64>,
}

pub const LOF_DEFAULT_K: usize = 20;

impl LocalOutlierFactor {
    pub fn fit(points: &[Vec<f64>], k: usize) -> Result<Self> {
        let n = points.len();
        if k == 0 {
            return Err(Error::InvalidConfig("LOF needs k >= 1".into()));
        }
        if n < k + 1 {
            return Err(Error::TooFewPoints { needed: k + 1, got: n });
        }
        // neighbourhoods include every point tied with the k-th distance
        let mut k_dist = vec![0.0; n];
        let mut neighbours: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut d: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, euclidean(&points[i], &points[j])))
                .collect();
            d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let kd = d[k - 1].1;
            k_dist[i] = kd;
            d.retain(|&(_, dist)| dist <= kd);
            neighbours.push(d);
        }
        // small offset keeps duplicated points finite (all ratios become 1)
        let lrd: Vec<f64> = (0..n)
            .map(|i| {
                let nb = &neighbours[i];
                let reach: f64 = nb.iter().map(|&(j, d)| d.max(k_dist[j])).sum::<f64>() / nb.len() as f64;
                1.0 / (reach + 1e-10)
            })
            .collect();
        let scores = (0..n)
            .map(|i| {
                let nb = &neighbours[i];
                nb.iter().map(|&(j, _)| lrd[j]).sum::<f64>() / nb.len() as f64 / lrd[i]
            })
            .collect();
        Ok(LocalOutlierFactor { scores })
    }

    pub fn score(&self, index: usize) -> f64 {
        self.scores[index]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

/// LOF of `features[query_index]` with respect to the whole set.
pub fn lof_score(features: &[Vec<f64>], query_index: usize, k: usize) -> Result<f64> {
    if query_index >= features.len() {
        return Err(Error::OutOfRange(format!("query index {query_index}")));
    }
    Ok(LocalOutlierFactor::fit(features, k)?.score(query_index))
}

/// Average path length of an unsuccessful search in a binary search tree of
/// `n` points.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + 0.577_215_664_901_532_9) - 2.0 * (n - 1.0) / n
        }
    }
}

#[derive(Debug, Clone)]
enum IsoNode {
    Leaf { size: usize },
    Split { feature: usize, threshold: f64, left: Box<IsoNode>, right: Box<IsoNode> },
}

impl IsoNode {
    fn build(points: &[Vec<f64>], idx: &mut [usize], depth: usize, limit: usize, rng: &mut StreamRng) -> IsoNode {
        if depth >= limit || idx.len() <= 1 {
            return IsoNode::Leaf { size: idx.len() };
        }
        let d = points[idx[0]].len();
        let ranges: Vec<(usize, f64, f64)> = (0..d)
            .filter_map(|j| {
                let (lo, hi) = idx
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &i| (a.min(points[i][j]), b.max(points[i][j])));
                (hi > lo).then_some((j, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return IsoNode::Leaf { size: idx.len() };
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let threshold = rng.random_range(lo..hi);
        let mut split = 0;
        for i in 0..idx.len() {
            if points[idx[i]][feature] < threshold {
                idx.swap(i, split);
                split += 1;
            }
        }
        let (l, r) = idx.split_at_mut(split);
        IsoNode::Split {
            feature,
            threshold,
            left: Box::new(IsoNode::build(points, l, depth + 1, limit, rng)),
            right: Box::new(IsoNode::build(points, r, depth + 1, limit, rng)),
        }
    }

    fn path_length(&self, x: &[f64], depth: usize) -> f64 {
        match self {
            IsoNode::Leaf { size } => depth as f64 + average_path_length(*size),
            IsoNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] < *threshold {
                    left.path_length(x, depth + 1)
                } else {
                    right.path_length(x, depth + 1)
                }
            }
        }
    }
}

/// Isolation forest: `n_trees` trees on subsamples of `min(256, n)` points,
/// height-limited to `ceil(log2(subsample))`.
#[derive(Debug, Clone)]
pub struct IsolationForest {
    trees: Vec<IsoNode>,
    subsample: usize,
}

impl IsolationForest {
    pub const DEFAULT_TREES: usize = 100;
    pub const DEFAULT_SUBSAMPLE: usize = 256;

    pub fn fit(points: &[Vec<f64>], n_trees: usize, seed: u64) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(Error::TooFewPoints { needed: 2, got: n });
        }
        let subsample = Self::DEFAULT_SUBSAMPLE.min(n);
        let limit = (subsample as f64).log2().ceil() as usize;
        let trees = (0..n_trees)
            .map(|t| {
                let mut rng = stream(seed, "iforest/tree", t as u64);
                let mut idx = sample_indices(&mut rng, n, subsample).into_vec();
                IsoNode::build(points, &mut idx, 0, limit, &mut rng)
            })
            .collect();
        Ok(IsolationForest { trees, subsample })
    }

    /// Anomaly score `2^(-E[h(x)] / c(subsample))`.
    pub fn score(&self, x: &[f64]) -> f64 {
        let mean_path = self.trees.iter().map(|t| t.path_length(x, 0)).sum::<f64>() / self.trees.len() as f64;
        2f64.powf(-mean_path / average_path_length(self.subsample))
    }
}

/// Isolation-forest score of `features[query_index]` (100 trees).
pub fn iso_score(features: &[Vec<f64>], query_index: usize, seed: u64) -> Result<f64> {
    if query_index >= features.len() {
        return Err(Error::OutOfRange(format!("query index {query_index}")));
    }
    let forest = IsolationForest::fit(features, IsolationForest::DEFAULT_TREES, seed)?;
    Ok(forest.score(&features[query_index]))
}
