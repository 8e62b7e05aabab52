use serde::{Deserialize, Serialize};

use super::Standardizer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticParams {
    pub l2: f64,
    pub epochs: usize,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams { l2: 1e-4, epochs: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PairModel {
    a: usize,
    b: usize,
    /// Weights then bias; positive score favours `a`.
    w: Vec<f64>,
}

/// One-vs-one logistic regression with full-batch gradient descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvoLogistic {
    m: usize,
    scaler: Standardizer,
    pairs: Vec<PairModel>,
}

fn score(w: &[f64], x: &[f64]) -> f64 {
    w[..x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[x.len()]
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Largest eigenvalue of `[X 1]^T [X 1] / n` by power iteration; sets the
/// gradient-descent step so the loss is guaranteed to decrease.
fn gram_top_eigenvalue(rows: &[&[f64]]) -> f64 {
    let d = rows[0].len() + 1;
    let n = rows.len() as f64;
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 1.0;
    for _ in 0..30 {
        let mut next = vec![0.0; d];
        for r in rows {
            let s = score(&v, r);
            for (nj, xj) in next.iter_mut().zip(r.iter()) {
                *nj += s * xj;
            }
            next[d - 1] += s;
        }
        next.iter_mut().for_each(|v| *v /= n);
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 1.0;
        }
        lambda = norm;
        v = next.into_iter().map(|x| x / norm).collect();
    }
    lambda
}

impl OvoLogistic {
    pub fn fit(x: &[&[f64]], y: &[usize], m: usize, params: &LogisticParams) -> Self {
        let scaler = Standardizer::fit(x);
        let z: Vec<Vec<f64>> = x.iter().map(|r| scaler.apply(r)).collect();
        let d = z[0].len();
        let mut pairs = Vec::new();
        for a in 0..m {
            for b in a + 1..m {
                let rows: Vec<(&[f64], f64)> = z
                    .iter()
                    .zip(y)
                    .filter(|(_, &c)| c == a || c == b)
                    .map(|(r, &c)| (r.as_slice(), if c == a { 1.0 } else { 0.0 }))
                    .collect();
                let xs: Vec<&[f64]> = rows.iter().map(|r| r.0).collect();
                let step = 1.0 / (0.25 * gram_top_eigenvalue(&xs) + params.l2);
                let n = rows.len() as f64;
                let mut w = vec![0.0; d + 1];
                for _ in 0..params.epochs {
                    let mut grad = vec![0.0; d + 1];
                    for &(r, t) in &rows {
                        let e = sigmoid(score(&w, r)) - t;
                        for (gj, xj) in grad.iter_mut().zip(r) {
                            *gj += e * xj;
                        }
                        grad[d] += e;
                    }
                    for j in 0..=d {
                        let reg = if j < d { params.l2 * w[j] } else { 0.0 };
                        w[j] -= step * (grad[j] / n + reg);
                    }
                }
                pairs.push(PairModel { a, b, w });
            }
        }
        OvoLogistic { m, scaler, pairs }
    }

    /// Pairwise vote fractions; a pair at exactly 0.5 votes for its lower class.
    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        let z = self.scaler.apply(x);
        let mut votes = vec![0.0; self.m];
        for p in &self.pairs {
            if sigmoid(score(&p.w, &z)) >= 0.5 {
                votes[p.a] += 1.0;
            } else {
                votes[p.b] += 1.0;
            }
        }
        let n = self.pairs.len() as f64;
        votes.iter_mut().for_each(|v| *v /= n);
        votes
    }
}
