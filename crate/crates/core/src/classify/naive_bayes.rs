use serde::{Deserialize, Serialize};

use super::softmax_log;

/// Gaussian naive Bayes over `m` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayes {
    log_prior: Vec<f64>,
    means: Vec<Vec<f64>>,
    vars: Vec<Vec<f64>>,
}

impl NaiveBayes {
    /// `y` holds compact labels `0..m`, each present at least once. Variances
    /// are floored at `1e-9` times the largest per-class variance.
    pub fn fit(x: &[&[f64]], y: &[usize], m: usize) -> Self {
        let d = x[0].len();
        let mut counts = vec![0usize; m];
        let mut means = vec![vec![0.0; d]; m];
        for (row, &c) in x.iter().zip(y) {
            counts[c] += 1;
            for (acc, v) in means[c].iter_mut().zip(row.iter()) {
                *acc += v;
            }
        }
        for (mu, &n) in means.iter_mut().zip(&counts) {
            mu.iter_mut().for_each(|v| *v /= n as f64);
        }
        let mut vars = vec![vec![0.0; d]; m];
        for (row, &c) in x.iter().zip(y) {
            for j in 0..d {
                vars[c][j] += (row[j] - means[c][j]).powi(2);
            }
        }
        for (var, &n) in vars.iter_mut().zip(&counts) {
            var.iter_mut().for_each(|v| *v /= n as f64);
        }
        let max_var = vars.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
        let floor = if max_var > 0.0 { 1e-9 * max_var } else { 1e-9 };
        vars.iter_mut().flatten().for_each(|v| *v = v.max(floor));
        let n = y.len() as f64;
        NaiveBayes {
            log_prior: counts.iter().map(|&c| (c as f64 / n).ln()).collect(),
            means,
            vars,
        }
    }

    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        let log_joint: Vec<f64> = (0..self.means.len())
            .map(|c| {
                let ll: f64 = x
                    .iter()
                    .zip(&self.means[c])
                    .zip(&self.vars[c])
                    .map(|((v, mu), var)| -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (v - mu).powi(2) / var))
                    .sum();
                self.log_prior[c] + ll
            })
            .collect();
        softmax_log(&log_joint)
    }
}
