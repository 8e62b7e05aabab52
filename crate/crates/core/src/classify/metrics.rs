use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ConsistencyReport;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix { k, counts: vec![vec![0; k]; k] }
    }

    pub fn from_pairs(k: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut m = ConfusionMatrix::new(k);
        for (t, p) in pairs {
            m.record(t, p)?;
        }
        Ok(m)
    }

    /// From a square count table, rows being true classes.
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::DimensionMismatch(format!("confusion counts must be a non-empty square table, got {k} rows")));
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.k || predicted >= self.k {
            return Err(Error::OutOfRange(format!(
                "class pair ({truth}, {predicted}) outside 0..{}",
                self.k
            )));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth].iter().sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        self.counts.iter().map(|r| r[predicted]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.k).map(|i| self.counts[i][i]).sum();
        diag as f64 / self.total().max(1) as f64
    }

    /// Row-normalised matrix: entry `(t, p)` estimates `P(pred = p | true = t)`.
    /// Empty rows stay zero.
    pub fn conditional(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let n: u64 = row.iter().sum();
                row.iter().map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 }).collect()
            })
            .collect()
    }

    pub fn f1(&self) -> F1Report {
        let per_class: Vec<f64> = (0..self.k)
            .map(|c| {
                let tp = self.counts[c][c] as f64;
                let pred = self.col_sum(c) as f64;
                let actual = self.row_sum(c) as f64;
                let precision = if pred == 0.0 { 0.0 } else { tp / pred };
                let recall = if actual == 0.0 { 0.0 } else { tp / actual };
                if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                }
            })
            .collect();
        let macro_f1 = per_class.iter().sum::<f64>() / self.k as f64;
        F1Report { per_class, macro_f1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub per_class: Vec<f64>,
    pub macro_f1: f64,
}

/// Fraction of `(truth, predicted)` pairs whose one-hot vectors are more than
/// `beta` apart in L1 (0 if equal, 2 otherwise).
pub fn consistency_from_pairs(pairs: &[(usize, usize)], beta: f64, xi: f64) -> ConsistencyReport {
    let exceed = pairs
        .iter()
        .filter(|(t, p)| {
            let d = if t == p { 0.0 } else { 2.0 };
            d > beta
        })
        .count();
    let rate = if pairs.is_empty() { 0.0 } else { exceed as f64 / pairs.len() as f64 };
    ConsistencyReport::new(beta, xi, rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_prediction_macro_f1() {
        // class 0: precision 0.5, recall 1 -> F1 2/3; class 1: 0
        let pairs = (0..10).map(|i| (i % 2, 0));
        let m = ConfusionMatrix::from_pairs(2, pairs).unwrap();
        let f = m.f1();
        assert!((f.per_class[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f.per_class[1], 0.0);
        assert!((f.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let m = ConfusionMatrix::from_pairs(3, (0..9).map(|i| (i % 3, i % 3))).unwrap();
        assert_eq!(m.f1().per_class, vec![1.0; 3]);
        assert_eq!(m.accuracy(), 1.0);
        assert_eq!(m.row_sum(1), 3);
    }

    #[test]
    fn consistency_counts() {
        let mut pairs: Vec<(usize, usize)> = (0..100).map(|i| (i % 4, i % 4)).collect();
        for p in pairs.iter_mut().take(3) {
            p.1 = (p.0 + 1) % 4;
        }
        let r = consistency_from_pairs(&pairs, 0.0, 0.05);
        assert!((r.empirical_exceedance_rate - 0.03).abs() < 1e-15);
        assert!(r.passed);
        assert_eq!(consistency_from_pairs(&pairs, 2.0, 0.0).empirical_exceedance_rate, 0.0);
        let perfect: Vec<_> = (0..10).map(|i| (i % 2, i % 2)).collect();
        assert!(consistency_from_pairs(&perfect, 0.0, 0.0).passed);
    }

    #[test]
    fn out_of_range_pair() {
        assert_eq!(ConfusionMatrix::from_pairs(2, [(0, 2)]).unwrap_err().name(), "out-of-range");
    }
}
