use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{softmax_log, Standardizer};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    pub lambda: f64,
    pub epochs: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { lambda: 1e-4, epochs: 50 }
    }
}

/// One-vs-rest linear SVM trained by Pegasos stochastic subgradient steps on
/// standardised features. The bias is an extra constant input, regularised
/// along with the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    scaler: Standardizer,
    /// One row per class; last entry is the bias.
    weights: Vec<Vec<f64>>,
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w[..x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[x.len()]
}

impl LinearSvm {
    pub fn fit(x: &[&[f64]], y: &[usize], m: usize, params: &SvmParams, seed: u64) -> Self {
        let scaler = Standardizer::fit(x);
        let z: Vec<Vec<f64>> = x.iter().map(|r| scaler.apply(r)).collect();
        let d = z[0].len();
        let lambda = params.lambda;
        let radius = 1.0 / lambda.sqrt();
        // all classes see the same visiting order, so relabelling classes
        // only permutes the fitted rows
        let epochs = params.epochs.max(1);
        let orders: Vec<Vec<usize>> = (0..epochs)
            .map(|e| {
                let mut o: Vec<usize> = (0..z.len()).collect();
                o.shuffle(&mut stream(seed, "svm/epoch", e as u64));
                o
            })
            .collect();
        let weights = (0..m)
            .map(|c| {
                let mut w = vec![0.0; d + 1];
                let mut t = 0u64;
                for order in &orders {
                    for &i in order {
                        t += 1;
                        let eta = 1.0 / (lambda * t as f64);
                        let target = if y[i] == c { 1.0 } else { -1.0 };
                        let margin = target * dot(&w, &z[i]);
                        let shrink = 1.0 - eta * lambda;
                        w.iter_mut().for_each(|v| *v *= shrink);
                        if margin < 1.0 {
                            for (wj, xj) in w.iter_mut().zip(&z[i]) {
                                *wj += eta * target * xj;
                            }
                            w[d] += eta * target;
                        }
                        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm > radius {
                            let s = radius / norm;
                            w.iter_mut().for_each(|v| *v *= s);
                        }
                    }
                }
                w
            })
            .collect();
        LinearSvm { scaler, weights }
    }

    pub fn margins(&self, x: &[f64]) -> Vec<f64> {
        let z = self.scaler.apply(x);
        self.weights.iter().map(|w| dot(w, &z)).collect()
    }

    /// Softmax over the one-vs-rest margins.
    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        softmax_log(&self.margins(x))
    }
}
