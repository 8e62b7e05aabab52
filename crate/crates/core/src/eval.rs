//! Experiment harness: intensity-group discrimination, repeated balanced
//! classifier benchmarks and the health-factor threshold sweep.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{train_matrix, ClassifierKind, ConfusionMatrix, TrainConfig};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureConfig};
use crate::intensity::{
    dpat_score, intensity_score, standardize, wafer_summary, yield_loss, IntensityMethod, IsolationForest,
    LocalOutlierFactor, DPAT_DEFAULT_K, LOF_DEFAULT_K,
};
use crate::model::{CriticalityModel, IntensityGrade, LabeledSample, PatternRegistry, PatternVector, Wafermap};
use crate::rng::stream;
use crate::stats::{self, one_way_anova, tukey_hsd, AnovaResult, TukeyComparison};
use crate::synth::{grade_intensity, GeneratorConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub runs: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
    pub tau_grid: Vec<f64>,
    /// Ground truth is critical iff `h(true pattern) > tau_ref`.
    pub tau_ref: f64,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            runs: 100,
            train_per_class: 100,
            test_per_class: 100,
            seed: 0,
            tau_grid: (0..=100).map(|k| k as f64 / 100.0).collect(),
            tau_ref: 0.25,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidConfig("runs must be >= 1".into()));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::InvalidConfig("train and test counts must be >= 1 per class".into()));
        }
        if !(0.0..=1.0).contains(&self.tau_ref) {
            return Err(Error::OutOfRange(format!("tau_ref {} outside [0,1]", self.tau_ref)));
        }
        Ok(())
    }
}

/// Feature rows, class labels and Moran intensities of a labelled corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub registry: PatternRegistry,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub intensity: Vec<f64>,
}

impl FeatureTable {
    pub fn from_samples(samples: &[LabeledSample], registry: &PatternRegistry, cfg: &FeatureConfig) -> Result<Self> {
        let out: Vec<(Vec<f64>, usize, f64)> = samples
            .par_iter()
            .enumerate()
            .map(|(n, s)| {
                let class = s
                    .class_index()
                    .ok_or_else(|| Error::InvalidConfig(format!("sample {n} is not single-label")))?;
                let fv = extract_features(&s.wafermap, cfg)?;
                let i = match intensity_score(&s.wafermap) {
                    Ok(i) => i,
                    Err(Error::ZeroVariance) => 0.0,
                    Err(e) => return Err(e),
                };
                Ok((fv.values, class, i))
            })
            .collect::<Result<_>>()?;
        let mut t = FeatureTable {
            registry: registry.clone(),
            rows: Vec::with_capacity(out.len()),
            labels: Vec::with_capacity(out.len()),
            intensity: Vec::with_capacity(out.len()),
        };
        for (r, c, i) in out {
            if c >= registry.k() {
                return Err(Error::OutOfRange(format!("class {c} outside registry of K={}", registry.k())));
            }
            t.rows.push(r);
            t.labels.push(c);
            t.intensity.push(i);
        }
        Ok(t)
    }
}

/// Disjoint balanced train/test index sets for one run. Classes with no
/// samples in the table are skipped.
pub fn balanced_split(labels: &[usize], k: usize, train: usize, test: usize, seed: u64, run: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = stream(seed, "eval/split", run as u64);
    let (mut tr, mut te) = (Vec::new(), Vec::new());
    for c in 0..k {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < train + test {
            return Err(Error::InvalidConfig(format!(
                "class {c} has {} samples, split needs {}",
                idx.len(),
                train + test
            )));
        }
        idx.shuffle(&mut rng);
        tr.extend_from_slice(&idx[..train]);
        te.extend_from_slice(&idx[train..train + test]);
    }
    Ok((tr, te))
}

fn run_confusion(table: &FeatureTable, kind: ClassifierKind, cfg: &ExperimentConfig, run: usize) -> Result<(ConfusionMatrix, Vec<usize>, Vec<usize>)> {
    let k = table.registry.k();
    let (tr, te) = balanced_split(&table.labels, k, cfg.train_per_class, cfg.test_per_class, cfg.seed, run)?;
    let x: Vec<&[f64]> = tr.iter().map(|&i| table.rows[i].as_slice()).collect();
    let y: Vec<usize> = tr.iter().map(|&i| table.labels[i]).collect();
    let clf_seed = crate::rng::derive_seed(cfg.seed, &format!("eval/train/{kind}"), run as u64);
    let clf = train_matrix(kind, &cfg.train, &x, &y, &table.registry, clf_seed)?;
    let mut cm = ConfusionMatrix::new(k);
    let mut preds = Vec::with_capacity(te.len());
    for &i in &te {
        let p = clf.predict(&table.rows[i])?.0;
        cm.record(table.labels[i], p)?;
        preds.push(p);
    }
    Ok((cm, te, preds))
}

/// Summary over runs of one quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    pub q05: f64,
    pub q95: f64,
}

impl Spread {
    /// Values are sorted first so the result does not depend on run order.
    pub fn of(values: &[f64]) -> Spread {
        let s = stats::sorted_copy(values);
        Spread {
            mean: stats::mean(&s),
            sd: if s.len() > 1 { stats::sample_sd(&s) } else { 0.0 },
            min: s[0],
            max: s[s.len() - 1],
            q05: stats::quantile_sorted(&s, 0.05),
            q95: stats::quantile_sorted(&s, 0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindBenchmark {
    pub kind: ClassifierKind,
    pub per_class_mean: Vec<f64>,
    pub per_class_sd: Vec<f64>,
    pub macro_f1: Spread,
    pub macro_per_run: Vec<f64>,
    /// Confusion counts summed over runs.
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub classes: Vec<String>,
    pub runs: usize,
    pub kinds: Vec<KindBenchmark>,
}

impl BenchmarkResult {
    pub fn kind(&self, kind: ClassifierKind) -> Option<&KindBenchmark> {
        self.kinds.iter().find(|k| k.kind == kind)
    }
}

pub fn run_classifier_benchmark(table: &FeatureTable, kinds: &[ClassifierKind], cfg: &ExperimentConfig) -> Result<BenchmarkResult> {
    cfg.validate()?;
    let k = table.registry.k();
    let mut out = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let runs: Vec<ConfusionMatrix> = (0..cfg.runs)
            .into_par_iter()
            .map(|r| run_confusion(table, kind, cfg, r).map(|(cm, _, _)| cm))
            .collect::<Result<_>>()?;
        let f1s: Vec<_> = runs.iter().map(|cm| cm.f1()).collect();
        let per_class: Vec<Spread> = (0..k)
            .map(|c| Spread::of(&f1s.iter().map(|f| f.per_class[c]).collect::<Vec<_>>()))
            .collect();
        let macro_per_run: Vec<f64> = f1s.iter().map(|f| f.macro_f1).collect();
        let mut total = ConfusionMatrix::new(k);
        for cm in &runs {
            for t in 0..k {
                for p in 0..k {
                    for _ in 0..cm.get(t, p) {
                        total.record(t, p)?;
                    }
                }
            }
        }
        out.push(KindBenchmark {
            kind,
            per_class_mean: per_class.iter().map(|s| s.mean).collect(),
            per_class_sd: per_class.iter().map(|s| s.sd).collect(),
            macro_f1: Spread::of(&macro_per_run),
            macro_per_run,
            confusion: total,
        });
    }
    Ok(BenchmarkResult {
        classes: table.registry.names().to_vec(),
        runs: cfg.runs,
        kinds: out,
    })
}

/// Binary F1 with the critical state as the positive class; 0 when undefined.
pub fn binary_f1(truth: &[bool], alarm: &[bool]) -> f64 {
    let tp = truth.iter().zip(alarm).filter(|(&t, &a)| t && a).count() as f64;
    let fp = truth.iter().zip(alarm).filter(|(&t, &a)| !t && a).count() as f64;
    let fneg = truth.iter().zip(alarm).filter(|(&t, &a)| t && !a).count() as f64;
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fneg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau: f64,
    #[serde(flatten)]
    pub f1: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub kind: ClassifierKind,
    pub runs: usize,
    pub points: Vec<SweepPoint>,
    /// Grid index of the highest mean F1 (first on ties).
    pub best: usize,
}

impl SweepResult {
    pub fn best_point(&self) -> &SweepPoint {
        &self.points[self.best]
    }

    /// Widest run of consecutive grid points with mean F1 at least `level`,
    /// as `(tau_start, tau_end)`.
    pub fn widest_band(&self, level: f64) -> Option<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        let mut start: Option<usize> = None;
        for (k, p) in self.points.iter().enumerate() {
            if p.f1.mean >= level {
                let s = *start.get_or_insert(k);
                let cand = (self.points[s].tau, p.tau);
                if best.is_none_or(|b| cand.1 - cand.0 > b.1 - b.0) {
                    best = Some(cand);
                }
            } else {
                start = None;
            }
        }
        best
    }
}

/// Per run: balanced split, train `kind`, score the test maps with
/// `HF = i * h(predicted)` and compare `HF > tau` with the ground truth
/// `h(true) > tau_ref` across the grid.
pub fn run_threshold_sweep(table: &FeatureTable, kind: ClassifierKind, criticality: &CriticalityModel, cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    if cfg.tau_grid.is_empty() {
        return Err(Error::EmptyTauGrid);
    }
    let k = table.registry.k();
    if criticality.k() != k {
        return Err(Error::DimensionMismatch(format!("criticality over {} classes, registry has {k}", criticality.k())));
    }
    let h: Vec<f64> = (0..k)
        .map(|c| criticality.expected(&PatternVector::one_hot(k, c)?))
        .collect::<Result<_>>()?;
    let per_run: Vec<Vec<f64>> = (0..cfg.runs)
        .into_par_iter()
        .map(|r| {
            let (_, test, preds) = run_confusion(table, kind, cfg, r)?;
            let truth: Vec<bool> = test.iter().map(|&i| h[table.labels[i]] > cfg.tau_ref).collect();
            let hf: Vec<f64> = test.iter().zip(&preds).map(|(&i, &p)| table.intensity[i] * h[p]).collect();
            Ok(cfg
                .tau_grid
                .iter()
                .map(|&t| {
                    let alarm: Vec<bool> = hf.iter().map(|&v| v > t).collect();
                    binary_f1(&truth, &alarm)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let points: Vec<SweepPoint> = cfg
        .tau_grid
        .iter()
        .enumerate()
        .map(|(j, &tau)| SweepPoint {
            tau,
            f1: Spread::of(&per_run.iter().map(|r| r[j]).collect::<Vec<_>>()),
        })
        .collect();
    let mut best = 0;
    for (j, p) in points.iter().enumerate() {
        if p.f1.mean > points[best].f1.mean {
            best = j;
        }
    }
    Ok(SweepResult {
        kind,
        runs: cfg.runs,
        points,
        best,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub spec_lo: f64,
    pub spec_hi: f64,
    pub dpat_k: f64,
    pub lof_k: usize,
    pub iso_trees: usize,
    pub seed: u64,
}

impl StudyConfig {
    /// Specification limits six noise sigmas beyond the range a strong
    /// pattern can reach, so every generated die is in spec.
    pub fn in_spec_for(gen: &GeneratorConfig) -> Self {
        let peak = gen
            .pattern_types
            .iter()
            .map(|k| grade_intensity(IntensityGrade::Strong) * k.amplitude_scale() * gen.noise_sigma)
            .fold(0.0, f64::max);
        StudyConfig {
            spec_lo: -6.0 * gen.noise_sigma,
            spec_hi: peak + 6.0 * gen.noise_sigma,
            dpat_k: DPAT_DEFAULT_K,
            lof_k: LOF_DEFAULT_K,
            iso_trees: IsolationForest::DEFAULT_TREES,
            seed: gen.seed,
        }
    }
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig::in_spec_for(&GeneratorConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStudy {
    pub method: IntensityMethod,
    pub scores: Vec<f64>,
    pub group_means: Vec<f64>,
    pub anova: AnovaResult,
    pub tukey: Vec<TukeyComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityStudy {
    /// Grades present, in weak/mediocre/strong order; group indices in the
    /// Tukey comparisons refer to this list.
    pub grades: Vec<IntensityGrade>,
    pub methods: Vec<MethodStudy>,
}

impl IntensityStudy {
    pub fn method(&self, m: IntensityMethod) -> Option<&MethodStudy> {
        self.methods.iter().find(|s| s.method == m)
    }
}

/// One indicator score per map. LOF and ISO are fitted on the standardized
/// per-wafer summaries of the whole batch.
pub fn score_batch(maps: &[&Wafermap], method: IntensityMethod, cfg: &StudyConfig) -> Result<Vec<f64>> {
    let summary = || -> Result<Vec<Vec<f64>>> {
        let raw: Vec<Vec<f64>> = maps
            .par_iter()
            .map(|w| wafer_summary(w, cfg.spec_lo, cfg.spec_hi))
            .collect::<Result<_>>()?;
        Ok(standardize(&raw))
    };
    match method {
        IntensityMethod::HfMoran => maps
            .par_iter()
            .map(|w| match intensity_score(w) {
                Err(Error::ZeroVariance) => Ok(0.0),
                r => r,
            })
            .collect(),
        IntensityMethod::Yfail => maps.par_iter().map(|w| yield_loss(w, cfg.spec_lo, cfg.spec_hi)).collect(),
        IntensityMethod::Dpat => maps.par_iter().map(|w| dpat_score(w, cfg.dpat_k)).collect(),
        IntensityMethod::Lof => Ok(LocalOutlierFactor::fit(&summary()?, cfg.lof_k)?.scores().to_vec()),
        IntensityMethod::Iso => {
            let points = summary()?;
            let forest = IsolationForest::fit(&points, cfg.iso_trees, crate::rng::derive_seed(cfg.seed, "eval/iso", 0))?;
            Ok(points.iter().map(|x| forest.score(x)).collect())
        }
    }
}

/// Scores every map with each method and tests for grade differences with a
/// one-way ANOVA and Tukey-Kramer pairwise comparisons.
pub fn run_intensity_study(samples: &[LabeledSample], methods: &[IntensityMethod], cfg: &StudyConfig) -> Result<IntensityStudy> {
    let grades_of: Vec<IntensityGrade> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| s.grade.ok_or_else(|| Error::DegenerateGroups(format!("sample {i} has no grade"))))
        .collect::<Result<_>>()?;
    let grades: Vec<IntensityGrade> = IntensityGrade::ALL.into_iter().filter(|g| grades_of.contains(g)).collect();
    if grades.len() < 2 {
        return Err(Error::DegenerateGroups(format!("{} grade(s) present", grades.len())));
    }
    let maps: Vec<&Wafermap> = samples.iter().map(|s| &s.wafermap).collect();
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let scores = score_batch(&maps, method, cfg)?;
        let groups: Vec<Vec<f64>> = grades
            .iter()
            .map(|g| scores.iter().zip(&grades_of).filter(|(_, h)| *h == g).map(|(s, _)| *s).collect())
            .collect();
        out.push(MethodStudy {
            method,
            group_means: groups.iter().map(|g| stats::mean(g)).collect(),
            anova: one_way_anova(&groups)?,
            tukey: tukey_hsd(&groups)?,
            scores,
        });
    }
    Ok(IntensityStudy { grades, methods: out })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// From a file extension; anything but `.json` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

/// Plot-ready tabular form of an experiment result.
pub trait Report: Serialize {
    fn to_csv(&self) -> String;
}

impl Report for SweepResult {
    fn to_csv(&self) -> String {
        let mut s = String::from("tau,mean,sd,q05,q95,min,max\n");
        for p in &self.points {
            let f = &p.f1;
            let _ = writeln!(s, "{:?},{:?},{:?},{:?},{:?},{:?},{:?}", p.tau, f.mean, f.sd, f.q05, f.q95, f.min, f.max);
        }
        s
    }
}

impl Report for BenchmarkResult {
    fn to_csv(&self) -> String {
        let mut s = String::from("kind,class,mean_f1,sd_f1\n");
        for k in &self.kinds {
            for (c, name) in self.classes.iter().enumerate() {
                let _ = writeln!(s, "{},{},{:?},{:?}", k.kind, name, k.per_class_mean[c], k.per_class_sd[c]);
            }
            let _ = writeln!(s, "{},macro,{:?},{:?}", k.kind, k.macro_f1.mean, k.macro_f1.sd);
        }
        s
    }
}

impl Report for IntensityStudy {
    fn to_csv(&self) -> String {
        let mut s = String::from("method,comparison,statistic,p\n");
        for m in &self.methods {
            let _ = writeln!(s, "{},anova,{:?},{:?}", m.method.name(), m.anova.f, m.anova.p);
            for t in &m.tukey {
                let _ = writeln!(
                    s,
                    "{},{}-{},{:?},{:?}",
                    m.method.name(),
                    self.grades[t.group_a].as_str(),
                    self.grades[t.group_b].as_str(),
                    t.q,
                    t.p
                );
            }
        }
        s
    }
}

pub fn render_report<R: Report>(result: &R, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => Ok(result.to_csv()),
        ReportFormat::Json => serde_json::to_string_pretty(result).map_err(|e| Error::Parse(e.to_string())),
    }
}

pub fn export_report<R: Report>(result: &R, path: &Path, format: ReportFormat) -> Result<PathBuf> {
    let body = render_report(result, format)?;
    std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_balanced_and_disjoint() {
        let labels: Vec<usize> = (0..90).map(|i| i % 3).collect();
        let (tr, te) = balanced_split(&labels, 3, 10, 15, 4, 2).unwrap();
        for c in 0..3 {
            assert_eq!(tr.iter().filter(|&&i| labels[i] == c).count(), 10);
            assert_eq!(te.iter().filter(|&&i| labels[i] == c).count(), 15);
        }
        assert!(tr.iter().all(|i| !te.contains(i)));
        assert_eq!(balanced_split(&labels, 3, 20, 15, 4, 2).unwrap_err().name(), "invalid-config");
    }

    #[test]
    fn binary_f1_conventions() {
        assert_eq!(binary_f1(&[true, false], &[false, false]), 0.0);
        assert_eq!(binary_f1(&[true, false], &[true, false]), 1.0);
        assert!((binary_f1(&[true, true, false, false], &[true, true, true, true]) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn spread_of_runs() {
        let s = Spread::of(&[3.0, 1.0, 2.0]);
        assert_eq!((s.min, s.max, s.mean), (1.0, 3.0, 2.0));
        assert!((s.q05 - 1.1).abs() < 1e-12);
        assert_eq!(Spread::of(&[0.5]).sd, 0.0);
    }

    fn toy_sweep() -> SweepResult {
        let pts = [0.5, 0.96, 0.97, 0.91, 0.2];
        SweepResult {
            kind: ClassifierKind::RandomForest,
            runs: 1,
            points: pts
                .iter()
                .enumerate()
                .map(|(k, &m)| SweepPoint {
                    tau: k as f64 * 0.1,
                    f1: Spread::of(&[m]),
                })
                .collect(),
            best: 2,
        }
    }

    #[test]
    fn sweep_band_and_exports() {
        let s = toy_sweep();
        let (a, b) = s.widest_band(0.9).unwrap();
        assert!((a - 0.1).abs() < 1e-12 && (b - 0.3).abs() < 1e-12);
        let csv = render_report(&s, ReportFormat::Csv).unwrap();
        assert_eq!(csv.lines().count(), 6);
        let json = render_report(&s, ReportFormat::Json).unwrap();
        let back: SweepResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
