//! Pattern-type classifiers over feature vectors, plus the confusion and F1
//! bookkeeping used to judge them.

mod forest;
mod logistic;
mod metrics;
mod naive_bayes;
mod svm;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use forest::{ForestParams, Node, RandomForest, Tree};
pub use logistic::{LogisticParams, OvoLogistic};
pub use metrics::{consistency_from_pairs, ConfusionMatrix, F1Report};
pub use naive_bayes::NaiveBayes;
pub use svm::{LinearSvm, SvmParams};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::model::{ConsistencyReport, PatternRegistry};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassifierKind {
    #[serde(rename = "nb")]
    NaiveBayes,
    #[serde(rename = "rf")]
    RandomForest,
    #[serde(rename = "svm-linear")]
    SvmLinear,
    #[serde(rename = "lr-ovo")]
    LogisticOvo,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 4] = [
        ClassifierKind::NaiveBayes,
        ClassifierKind::RandomForest,
        ClassifierKind::SvmLinear,
        ClassifierKind::LogisticOvo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::NaiveBayes => "nb",
            ClassifierKind::RandomForest => "rf",
            ClassifierKind::SvmLinear => "svm-linear",
            ClassifierKind::LogisticOvo => "lr-ovo",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nb" => Ok(ClassifierKind::NaiveBayes),
            "rf" => Ok(ClassifierKind::RandomForest),
            "svm" | "svml" | "svm-linear" => Ok(ClassifierKind::SvmLinear),
            "lr" | "lr-ovo" => Ok(ClassifierKind::LogisticOvo),
            other => Err(Error::InvalidConfig(format!("unknown classifier kind `{other}`"))),
        }
    }
}

/// Hyperparameters for every kind; only the block matching the trained kind
/// is consulted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub rf: ForestParams,
    pub svm: SvmParams,
    pub lr: LogisticParams,
}

/// Per-feature z-scoring; zero-variance features map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[&[f64]]) -> Self {
        let d = x[0].len();
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for r in x {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in x {
            for j in 0..d {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let scale = var.iter().map(|v| (v / n).sqrt()).collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect()
    }
}

/// Softmax of log-scores, shifted by the maximum for stability.
pub(crate) fn softmax_log(scores: &[f64]) -> Vec<f64> {
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum FittedModel {
    /// One class present in the registry: nothing to learn.
    Single,
    NaiveBayes(NaiveBayes),
    RandomForest(RandomForest),
    SvmLinear(LinearSvm),
    LogisticOvo(OvoLogistic),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub version: u32,
    pub kind: ClassifierKind,
    pub registry: PatternRegistry,
    pub n_features: usize,
    /// Registry indices of the classes seen in training, ascending; the
    /// fitted model works on positions in this list.
    pub classes: Vec<usize>,
    pub config: TrainConfig,
    pub seed: u64,
    /// SHA-256 over the training matrix and labels.
    pub train_fingerprint: String,
    pub model: FittedModel,
}

/// Hash of a labelled training matrix; stable across platforms.
pub fn training_fingerprint(x: &[&[f64]], y: &[usize]) -> String {
    let mut h = Sha256::new();
    h.update((x.len() as u64).to_le_bytes());
    for (row, &c) in x.iter().zip(y) {
        h.update((row.len() as u64).to_le_bytes());
        for v in row.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update((c as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn train(kind: ClassifierKind, samples: &[(FeatureVector, usize)], registry: &PatternRegistry, seed: u64) -> Result<TrainedClassifier> {
    let x: Vec<&[f64]> = samples.iter().map(|(f, _)| f.values.as_slice()).collect();
    let y: Vec<usize> = samples.iter().map(|(_, c)| *c).collect();
    train_matrix(kind, &TrainConfig::default(), &x, &y, registry, seed)
}

/// Trains on raw rows. Needs at least two classes with two samples each,
/// unless the registry has a single class.
pub fn train_matrix(
    kind: ClassifierKind,
    config: &TrainConfig,
    x: &[&[f64]],
    y: &[usize],
    registry: &PatternRegistry,
    seed: u64,
) -> Result<TrainedClassifier> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::DegenerateTrainingSet(format!("{} rows, {} labels", x.len(), y.len())));
    }
    let d = x[0].len();
    if d == 0 {
        return Err(Error::DegenerateTrainingSet("empty feature vectors".into()));
    }
    for row in x {
        if row.len() != d {
            return Err(Error::FeatureLengthMismatch { expected: d, got: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateTrainingSet("non-finite feature value".into()));
        }
    }
    let k = registry.k();
    let mut counts = vec![0usize; k];
    for &c in y {
        if c >= k {
            return Err(Error::OutOfRange(format!("class {c} outside registry of {k}")));
        }
        counts[c] += 1;
    }
    let classes: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();
    let model = if k == 1 {
        FittedModel::Single
    } else {
        if classes.len() < 2 {
            return Err(Error::DegenerateTrainingSet(format!("{} class(es) present", classes.len())));
        }
        if let Some(&c) = classes.iter().find(|&&c| counts[c] < 2) {
            return Err(Error::DegenerateTrainingSet(format!(
                "class `{}` has {} sample(s)",
                registry.name(c),
                counts[c]
            )));
        }
        let mut compact = vec![usize::MAX; k];
        for (i, &c) in classes.iter().enumerate() {
            compact[c] = i;
        }
        let yc: Vec<usize> = y.iter().map(|&c| compact[c]).collect();
        let m = classes.len();
        match kind {
            ClassifierKind::NaiveBayes => FittedModel::NaiveBayes(NaiveBayes::fit(x, &yc, m)),
            ClassifierKind::RandomForest => FittedModel::RandomForest(RandomForest::fit(x, &yc, m, &config.rf, seed)),
            ClassifierKind::SvmLinear => FittedModel::SvmLinear(LinearSvm::fit(x, &yc, m, &config.svm, seed)),
            ClassifierKind::LogisticOvo => FittedModel::LogisticOvo(OvoLogistic::fit(x, &yc, m, &config.lr)),
        }
    };
    Ok(TrainedClassifier {
        version: MODEL_FORMAT_VERSION,
        kind,
        registry: registry.clone(),
        n_features: d,
        classes,
        config: config.clone(),
        seed,
        train_fingerprint: training_fingerprint(x, y),
        model,
    })
}

impl TrainedClassifier {
    /// Posterior over all registry classes; classes unseen in training get 0.
    pub fn posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_features {
            return Err(Error::FeatureLengthMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let compact = match &self.model {
            FittedModel::Single => return Ok(vec![1.0]),
            FittedModel::NaiveBayes(m) => m.posterior(x),
            FittedModel::RandomForest(m) => m.posterior(x),
            FittedModel::SvmLinear(m) => m.posterior(x),
            FittedModel::LogisticOvo(m) => m.posterior(x),
        };
        let mut full = vec![0.0; self.registry.k()];
        for (p, &c) in compact.iter().zip(&self.classes) {
            full[c] = *p;
        }
        Ok(full)
    }

    /// `(argmax class, posterior)`; ties go to the lowest registry index.
    pub fn predict(&self, x: &[f64]) -> Result<(usize, Vec<f64>)> {
        let post = self.posterior(x)?;
        Ok((argmax(&post), post))
    }

    pub fn predict_features(&self, f: &FeatureVector) -> Result<(usize, Vec<f64>)> {
        self.predict(&f.values)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let clf: TrainedClassifier = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        if clf.version != MODEL_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "model format version {} (expected {MODEL_FORMAT_VERSION})",
                clf.version
            )));
        }
        Ok(clf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

fn predictions(clf: &TrainedClassifier, test: &[(&[f64], usize)]) -> Result<Vec<(usize, usize)>> {
    test.iter().map(|&(x, t)| Ok((t, clf.predict(x)?.0))).collect()
}

pub fn confusion(clf: &TrainedClassifier, test: &[(&[f64], usize)]) -> Result<ConfusionMatrix> {
    ConfusionMatrix::from_pairs(clf.registry.k(), predictions(clf, test)?)
}

pub fn evaluate_f1(clf: &TrainedClassifier, test: &[(&[f64], usize)]) -> Result<F1Report> {
    Ok(confusion(clf, test)?.f1())
}

/// Share of samples whose predicted one-hot is more than `beta` from the
/// true one (L1), checked against `xi`.
pub fn consistency_check(clf: &TrainedClassifier, samples: &[(&[f64], usize)], beta: f64, xi: f64) -> Result<ConsistencyReport> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("consistency check needs samples".into()));
    }
    Ok(consistency_from_pairs(&predictions(clf, samples)?, beta, xi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn registry(k: usize) -> PatternRegistry {
        PatternRegistry::new((0..k).map(|i| format!("c{i}"))).unwrap()
    }

    /// `k` Gaussian blobs in `d` dimensions, centres on the axes at distance `sep`.
    fn blobs(k: usize, per: usize, d: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = StreamRng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for c in 0..k {
            for _ in 0..per {
                let row: Vec<f64> = (0..d)
                    .map(|j| rng.sample::<f64, _>(StandardNormal) + if j == c % d { sep } else { 0.0 })
                    .collect();
                x.push(row);
                y.push(c);
            }
        }
        (x, y)
    }

    fn refs(x: &[Vec<f64>]) -> Vec<&[f64]> {
        x.iter().map(|r| r.as_slice()).collect()
    }

    fn accuracy(clf: &TrainedClassifier, x: &[Vec<f64>], y: &[usize]) -> f64 {
        let hits = x.iter().zip(y).filter(|(r, &c)| clf.predict(r).unwrap().0 == c).count();
        hits as f64 / y.len() as f64
    }

    #[test]
    fn every_kind_separates_blobs_and_normalises() {
        let (x, y) = blobs(3, 40, 4, 8.0, 1);
        for kind in ClassifierKind::ALL {
            let clf = train_matrix(kind, &TrainConfig::default(), &refs(&x), &y, &registry(3), 7).unwrap();
            assert_eq!(accuracy(&clf, &x, &y), 1.0, "{kind}");
            for r in &x {
                let (c, p) = clf.predict(r).unwrap();
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9, "{kind}");
                assert_eq!(c, argmax(&p));
            }
        }
    }

    #[test]
    fn nb_posterior_at_class_mean() {
        let x = vec![vec![-1.0], vec![-3.0], vec![1.0], vec![3.0]];
        let y = vec![0, 0, 1, 1];
        let clf = train_matrix(ClassifierKind::NaiveBayes, &TrainConfig::default(), &refs(&x), &y, &registry(2), 0).unwrap();
        let (c, p) = clf.predict(&[-2.0]).unwrap();
        assert_eq!(c, 0);
        assert!(p[0] > 0.5);
    }

    /// Best accuracy any single axis-aligned threshold can reach.
    fn best_stump_accuracy(x: &[Vec<f64>], y: &[usize]) -> f64 {
        let mut best = 0.0f64;
        for f in 0..x[0].len() {
            let mut cuts: Vec<f64> = x.iter().map(|r| r[f]).collect();
            cuts.push(f64::NEG_INFINITY);
            for &t in &cuts {
                for left_label in 0..2 {
                    let hits = x
                        .iter()
                        .zip(y)
                        .filter(|(r, &c)| (if r[f] <= t { left_label } else { 1 - left_label }) == c)
                        .count();
                    best = best.max(hits as f64 / y.len() as f64);
                }
            }
        }
        best
    }

    #[test]
    fn xor_defeats_a_stump() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..25 {
            for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
                x.push(vec![a, b]);
                y.push(((a + b) as usize) % 2);
            }
        }
        // on balanced XOR every axis split leaves both sides half/half
        let oracle = best_stump_accuracy(&x, &y);
        assert!(oracle <= 0.75);
        let cfg = TrainConfig {
            rf: ForestParams {
                n_trees: 1,
                max_depth: Some(1),
                ..Default::default()
            },
            ..Default::default()
        };
        for seed in 0..20 {
            let clf = train_matrix(ClassifierKind::RandomForest, &cfg, &refs(&x), &y, &registry(2), seed).unwrap();
            assert!(accuracy(&clf, &x, &y) <= oracle);
        }
    }

    #[test]
    fn same_seed_same_predictions() {
        let (x, y) = blobs(3, 30, 5, 2.0, 3);
        let (t, _) = blobs(3, 20, 5, 2.0, 4);
        for kind in ClassifierKind::ALL {
            let a = train_matrix(kind, &TrainConfig::default(), &refs(&x), &y, &registry(3), 11).unwrap();
            let b = train_matrix(kind, &TrainConfig::default(), &refs(&x), &y, &registry(3), 11).unwrap();
            assert_eq!(a, b);
            for r in &t {
                assert_eq!(a.predict(r).unwrap(), b.predict(r).unwrap());
            }
        }
    }

    #[test]
    fn label_permutation_equivariance() {
        let (x, y) = blobs(3, 30, 4, 1.5, 5);
        let (t, _) = blobs(3, 30, 4, 1.5, 6);
        let perm = [2usize, 0, 1];
        let yp: Vec<usize> = y.iter().map(|&c| perm[c]).collect();
        for kind in [ClassifierKind::NaiveBayes, ClassifierKind::RandomForest] {
            let a = train_matrix(kind, &TrainConfig::default(), &refs(&x), &y, &registry(3), 2).unwrap();
            let b = train_matrix(kind, &TrainConfig::default(), &refs(&x), &yp, &registry(3), 2).unwrap();
            for r in &t {
                let (pa, post_a) = a.predict(r).unwrap();
                let (pb, post_b) = b.predict(r).unwrap();
                let tied = post_a.iter().filter(|&&v| v == post_a[pa]).count() > 1;
                if !tied {
                    assert_eq!(perm[pa], pb, "{kind}");
                }
                for c in 0..3 {
                    assert!((post_a[c] - post_b[perm[c]]).abs() < 1e-12, "{kind}");
                }
            }
        }
    }

    #[test]
    fn single_class_registry() {
        let x = vec![vec![0.0, 1.0], vec![2.0, 3.0]];
        let clf = train_matrix(ClassifierKind::RandomForest, &TrainConfig::default(), &refs(&x), &[0, 0], &registry(1), 0).unwrap();
        assert_eq!(clf.predict(&[5.0, 5.0]).unwrap(), (0, vec![1.0]));
    }

    #[test]
    fn degenerate_training_sets() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let err = train_matrix(ClassifierKind::NaiveBayes, &TrainConfig::default(), &refs(&x), &[0, 0, 0], &registry(2), 0);
        assert_eq!(err.unwrap_err().name(), "degenerate-training-set");
        let err = train_matrix(ClassifierKind::NaiveBayes, &TrainConfig::default(), &refs(&x), &[0, 0, 1], &registry(2), 0);
        assert_eq!(err.unwrap_err().name(), "degenerate-training-set");
    }

    #[test]
    fn unseen_class_gets_zero_mass() {
        let (x, y) = blobs(2, 10, 2, 6.0, 8);
        let clf = train_matrix(ClassifierKind::SvmLinear, &TrainConfig::default(), &refs(&x), &y, &registry(3), 0).unwrap();
        let p = clf.posterior(&x[0]).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn length_mismatch_and_json_roundtrip() {
        let (x, y) = blobs(2, 10, 3, 4.0, 9);
        for kind in ClassifierKind::ALL {
            let clf = train_matrix(kind, &TrainConfig::default(), &refs(&x), &y, &registry(2), 1).unwrap();
            assert_eq!(clf.predict(&[0.0]).unwrap_err().name(), "feature-length-mismatch");
            let back = TrainedClassifier::from_json(&clf.to_json().unwrap()).unwrap();
            assert_eq!(back, clf);
        }
    }

    #[test]
    fn confusion_agrees_with_f1() {
        let (x, y) = blobs(3, 20, 3, 1.0, 10);
        let clf = train_matrix(ClassifierKind::NaiveBayes, &TrainConfig::default(), &refs(&x), &y, &registry(3), 0).unwrap();
        let test: Vec<(&[f64], usize)> = x.iter().map(|r| r.as_slice()).zip(y.iter().copied()).collect();
        let cm = confusion(&clf, &test).unwrap();
        for c in 0..3 {
            assert_eq!(cm.row_sum(c), 20);
        }
        let f = evaluate_f1(&clf, &test).unwrap();
        assert!((cm.f1().macro_f1 - f.macro_f1).abs() < 1e-12);
        let r = consistency_check(&clf, &test, 0.0, 1.0).unwrap();
        assert!((r.empirical_exceedance_rate - (1.0 - cm.accuracy())).abs() < 1e-12);
    }
}
