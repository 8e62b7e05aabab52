use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hfpc::bounds::{beta_criticality_sweep, parse_tau_range};
use hfpc::classify::{self, ClassifierKind, ConfusionMatrix, TrainConfig, TrainedClassifier};
use hfpc::error::{Error, Result};
use hfpc::eval::{
    render_report, run_classifier_benchmark, run_intensity_study, run_threshold_sweep, score_batch, ExperimentConfig,
    FeatureTable, Report, ReportFormat, StudyConfig,
};
use hfpc::features::{extract_batch, FeatureConfig};
use hfpc::health::{score_wafermap, DecisionConfig};
use hfpc::intensity::IntensityMethod;
use hfpc::model::{CriticalityModel, PatternRegistry, Wafermap};
use hfpc::synth::{generate_dataset, generate_intensity_study, load_dataset, save_dataset, GeneratorConfig, ManifestEntry};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::io::{manifest_path_for, read_feature_csv, read_json, render_feature_csv, write_atomic, RunManifest, RunRecorder};
use crate::{BenchArgs, BoundsArgs, Cli, Command, EvalArgs, FeaturesArgs, HfArgs, ScoreArgs, StudyArgs, SweepArgs, SynthArgs, TrainArgs};

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Ctx { cli };
    match &cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::Features(a) => features(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Bench(a) => bench(&ctx, a),
        Command::Score(a) => score(&ctx, a),
        Command::Hf(a) => hf(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::Bounds(a) => bounds(&ctx, a),
        Command::IntensityStudy(a) => intensity_study(&ctx, a),
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
}

impl Ctx<'_> {
    /// The subcommand config from `--config`, or its default.
    fn config<T: DeserializeOwned + Default>(&self) -> Result<T> {
        match &self.cli.config {
            Some(p) => read_json(p),
            None => Ok(T::default()),
        }
    }

    fn seed(&self, fallback: u64) -> u64 {
        self.cli.seed.unwrap_or(fallback)
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.cli.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn recorder(&self, seed: u64) -> RunRecorder {
        let mut r = RunRecorder::new(seed);
        if let Some(p) = &self.cli.config {
            r.input(p);
        }
        r
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut body = serde_json::to_vec_pretty(v).map_err(|e| Error::Parse(e.to_string()))?;
    body.push(b'\n');
    Ok(body)
}

/// Writes `body` to `out` and its run manifest beside it.
fn emit(out: &Path, body: &[u8], rec: RunRecorder) -> Result<()> {
    write_atomic(out, body)?;
    rec.finish(&[out.to_path_buf()], &manifest_path_for(out))
}

fn emit_report<R: Report>(out: &Path, report: &R, rec: RunRecorder) -> Result<()> {
    let body = render_report(report, ReportFormat::from_path(out))?;
    emit(out, body.as_bytes(), rec)
}

fn manifest_entries(path: &Path) -> Result<Vec<ManifestEntry>> {
    read_json(path)
}

/// Registry from pattern names in order of first appearance, as
/// `load_dataset` infers it.
fn registry_of(entries: &[ManifestEntry]) -> Result<PatternRegistry> {
    let mut names: Vec<&str> = Vec::new();
    for e in entries {
        if !names.contains(&e.pattern.as_str()) {
            names.push(&e.pattern);
        }
    }
    PatternRegistry::new(names)
}

/// The dataset manifest a features file was computed from.
fn features_source(features: &Path, explicit: Option<&PathBuf>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.clone());
    }
    let run: RunManifest = read_json(&manifest_path_for(features)).map_err(|_| {
        Error::InvalidConfig(format!(
            "no --manifest given and no run manifest beside {}",
            features.display()
        ))
    })?;
    run.inputs
        .iter()
        .map(|h| PathBuf::from(&h.path))
        .find(|p| p.file_name().and_then(|n| n.to_str()) == Some(hfpc::synth::MANIFEST_NAME))
        .ok_or_else(|| Error::InvalidConfig(format!("run manifest of {} names no dataset", features.display())))
}

/// Feature rows joined with manifest labels by file name.
fn labelled_rows(features: &Path, manifest: &Path, registry: &PatternRegistry) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let table = read_feature_csv(features)?;
    if table.columns.is_empty() {
        return Err(Error::Parse(format!("{}: no feature columns", features.display())));
    }
    let entries = manifest_entries(manifest)?;
    let by_file: BTreeMap<&str, &str> = entries.iter().map(|e| (e.file.as_str(), e.pattern.as_str())).collect();
    let mut labels = Vec::with_capacity(table.files.len());
    for f in &table.files {
        let name = by_file
            .get(f.as_str())
            .ok_or_else(|| Error::Parse(format!("{f} is not listed in {}", manifest.display())))?;
        labels.push(registry.index_of(name)?);
    }
    Ok((table.rows, labels))
}

/// `crit.json`: either a full criticality model or a `{name: level}` map
/// over the registry.
fn load_criticality(path: &Path, registry: &PatternRegistry) -> Result<CriticalityModel> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum CritFile {
        Model(CriticalityModel),
        Levels(BTreeMap<String, f64>),
    }
    let model = match read_json::<CritFile>(path)? {
        CritFile::Model(m) => {
            m.validate()?;
            m
        }
        CritFile::Levels(map) => {
            for name in map.keys() {
                registry.index_of(name)?;
            }
            let levels = registry
                .names()
                .iter()
                .map(|n| {
                    map.get(n)
                        .copied()
                        .ok_or_else(|| Error::InvalidConfig(format!("{}: no level for `{n}`", path.display())))
                })
                .collect::<Result<Vec<f64>>>()?;
            CriticalityModel::deterministic(levels)?
        }
    };
    if model.k() != registry.k() {
        return Err(Error::DimensionMismatch(format!(
            "criticality covers {} patterns, registry has {}",
            model.k(),
            registry.k()
        )));
    }
    Ok(model)
}

fn synth(ctx: &Ctx, a: &SynthArgs) -> Result<()> {
    let mut cfg: GeneratorConfig = ctx.config()?;
    cfg.seed = ctx.seed(cfg.seed);
    if let Some(types) = &a.types {
        cfg.pattern_types = types.iter().map(|t| t.parse()).collect::<Result<_>>()?;
    }
    if let Some(c) = &a.critical {
        cfg.critical = c.iter().map(|t| t.parse()).collect::<Result<_>>()?;
    }
    if let Some(n) = a.per_type {
        cfg.count_per_type = n;
    }
    if let Some(v) = a.intensity {
        cfg.intensity = v;
    }
    if let Some(v) = a.noise_sigma {
        cfg.noise_sigma = v;
    }
    if let Some(v) = a.width {
        cfg.width = v;
    }
    if let Some(v) = a.height {
        cfg.height = v;
    }
    let samples = match &a.study {
        Some(g) => match g.as_slice() {
            &[weak, mediocre, strong] => generate_intensity_study(&cfg, [weak, mediocre, strong])?,
            _ => return Err(Error::InvalidConfig(format!("--study needs 3 counts, got {}", g.len()))),
        },
        None => generate_dataset(&cfg)?,
    };
    ctx.log(format!("generated {} wafermaps", samples.len()));
    let manifest = save_dataset(&samples, &cfg.registry(), &a.out)?;
    let mut rec = ctx.recorder(cfg.seed);
    rec.config(&cfg);
    rec.finish(&[manifest.clone()], &manifest_path_for(&manifest))
}

fn features(ctx: &Ctx, a: &FeaturesArgs) -> Result<()> {
    let cfg: FeatureConfig = ctx.config()?;
    cfg.validate()?;
    let data = load_dataset(&a.dataset)?;
    let maps: Vec<&Wafermap> = data.samples.iter().map(|s| &s.wafermap).collect();
    let vectors = extract_batch(&maps, &cfg)?;
    ctx.log(format!("extracted {} x {} features", vectors.len(), cfg.len()));
    let columns: Vec<String> = cfg
        .schema()
        .iter()
        .flat_map(|b| (0..b.length).map(move |j| format!("{}_{j}", b.name)))
        .collect();
    let rows: Vec<Vec<f64>> = vectors.into_iter().map(|v| v.values).collect();
    let body = render_feature_csv(&columns, &data.files, &rows)?;
    let mut rec = ctx.recorder(ctx.seed(0));
    rec.config(&cfg);
    rec.input(&absolute(&a.dataset));
    emit(&a.out, &body, rec)
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

fn train(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let kind: ClassifierKind = a.kind.parse()?;
    let cfg: TrainConfig = ctx.config()?;
    let seed = ctx.seed(0);
    let manifest = features_source(&a.features, a.manifest.as_ref())?;
    let registry = registry_of(&manifest_entries(&manifest)?)?;
    let (rows, labels) = labelled_rows(&a.features, &manifest, &registry)?;
    let x: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let clf = classify::train_matrix(kind, &cfg, &x, &labels, &registry, seed)?;
    ctx.log(format!("trained {kind} on {} rows", rows.len()));
    let mut body = clf.to_json()?.into_bytes();
    body.push(b'\n');
    let mut rec = ctx.recorder(seed);
    rec.config(&cfg);
    rec.input(&a.features);
    rec.input(&manifest);
    emit(&a.out, &body, rec)
}

#[derive(Serialize)]
struct EvalReport {
    kind: ClassifierKind,
    classes: Vec<String>,
    n_samples: usize,
    accuracy: f64,
    confusion: ConfusionMatrix,
    f1: classify::F1Report,
    consistency: hfpc::model::ConsistencyReport,
}

fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let clf = TrainedClassifier::load(&a.model)?;
    let manifest = features_source(&a.features, a.manifest.as_ref())?;
    let (rows, labels) = labelled_rows(&a.features, &manifest, &clf.registry)?;
    let test: Vec<(&[f64], usize)> = rows.iter().map(Vec::as_slice).zip(labels.iter().copied()).collect();
    let confusion = classify::confusion(&clf, &test)?;
    let report = EvalReport {
        kind: clf.kind,
        classes: clf.registry.names().to_vec(),
        n_samples: test.len(),
        accuracy: confusion.accuracy(),
        f1: confusion.f1(),
        consistency: classify::consistency_check(&clf, &test, a.beta, a.xi)?,
        confusion,
    };
    ctx.log(format!("macro-F1 {:.4}", report.f1.macro_f1));
    let mut rec = ctx.recorder(clf.seed);
    rec.input(&a.model);
    rec.input(&a.features);
    rec.input(&manifest);
    emit(&a.report, &to_json(&report)?, rec)
}

fn experiment(ctx: &Ctx, runs: Option<usize>, train: Option<usize>, test: Option<usize>) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = ctx.config()?;
    cfg.seed = ctx.seed(cfg.seed);
    if let Some(v) = runs {
        cfg.runs = v;
    }
    if let Some(v) = train {
        cfg.train_per_class = v;
    }
    if let Some(v) = test {
        cfg.test_per_class = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn feature_table(ctx: &Ctx, dataset: &Path) -> Result<FeatureTable> {
    let data = load_dataset(dataset)?;
    ctx.log(format!("extracting features for {} wafermaps", data.samples.len()));
    FeatureTable::from_samples(&data.samples, &data.registry, &FeatureConfig::default())
}

fn bench(ctx: &Ctx, a: &BenchArgs) -> Result<()> {
    let cfg = experiment(ctx, a.runs, a.train, a.test)?;
    let kinds: Vec<ClassifierKind> = a.kinds.iter().map(|k| k.parse()).collect::<Result<_>>()?;
    let table = feature_table(ctx, &a.dataset)?;
    let result = run_classifier_benchmark(&table, &kinds, &cfg)?;
    let mut rec = ctx.recorder(cfg.seed);
    rec.config(&cfg);
    rec.input(&a.dataset);
    emit_report(&a.out, &result, rec)
}

fn study_config(ctx: &Ctx, lo: Option<f64>, hi: Option<f64>) -> Result<StudyConfig> {
    let mut cfg: StudyConfig = ctx.config()?;
    cfg.seed = ctx.seed(cfg.seed);
    if let Some(v) = lo {
        cfg.spec_lo = v;
    }
    if let Some(v) = hi {
        cfg.spec_hi = v;
    }
    if !(cfg.spec_lo < cfg.spec_hi) {
        return Err(Error::InvalidSpecLimits {
            lo: cfg.spec_lo,
            hi: cfg.spec_hi,
        });
    }
    Ok(cfg)
}

fn score(ctx: &Ctx, a: &ScoreArgs) -> Result<()> {
    let method = IntensityMethod::parse(&a.method)?;
    let cfg = study_config(ctx, a.spec_lo, a.spec_hi)?;
    let data = load_dataset(&a.dataset)?;
    let maps: Vec<&Wafermap> = data.samples.iter().map(|s| &s.wafermap).collect();
    let scores = score_batch(&maps, method, &cfg)?;
    let mut body = String::from("file,method,score\n");
    for (f, s) in data.files.iter().zip(&scores) {
        let _ = writeln!(body, "{f},{},{s:?}", a.method);
    }
    let mut rec = ctx.recorder(cfg.seed);
    rec.config(&cfg);
    rec.input(&a.dataset);
    emit(&a.out, body.as_bytes(), rec)
}

fn hf(ctx: &Ctx, a: &HfArgs) -> Result<()> {
    let clf = TrainedClassifier::load(&a.model)?;
    let criticality = load_criticality(&a.criticality, &clf.registry)?;
    let decision = DecisionConfig::new(a.tau)?;
    let features: FeatureConfig = ctx.config()?;
    let data = load_dataset(&a.dataset)?;
    let mut body = Vec::new();
    for (file, s) in data.files.iter().zip(&data.samples) {
        let report = score_wafermap(&s.wafermap, &clf, &criticality, &features, &decision)?;
        let mut line = serde_json::to_value(&report).map_err(|e| Error::Parse(e.to_string()))?;
        if let serde_json::Value::Object(m) = &mut line {
            m.insert("file".into(), serde_json::Value::String(file.clone()));
        }
        serde_json::to_writer(&mut body, &line).map_err(|e| Error::Parse(e.to_string()))?;
        body.push(b'\n');
    }
    let mut rec = ctx.recorder(clf.seed);
    rec.config(&decision);
    rec.input(&a.model);
    rec.input(&a.criticality);
    rec.input(&a.dataset);
    emit(&a.out, &body, rec)
}

fn sweep(ctx: &Ctx, a: &SweepArgs) -> Result<()> {
    let mut cfg = experiment(ctx, a.runs, a.train, a.test)?;
    if let Some(t) = &a.taus {
        cfg.tau_grid = parse_tau_range(t)?;
    }
    if let Some(t) = a.tau_ref {
        cfg.tau_ref = t;
    }
    cfg.validate()?;
    let kind: ClassifierKind = a.clf.parse()?;
    let table = feature_table(ctx, &a.dataset)?;
    let criticality = load_criticality(&a.crit, &table.registry)?;
    let result = run_threshold_sweep(&table, kind, &criticality, &cfg)?;
    ctx.log(format!("best tau {} with mean F1 {:.4}", result.best_point().tau, result.best_point().f1.mean));
    let mut rec = ctx.recorder(cfg.seed);
    rec.config(&cfg);
    rec.input(&a.dataset);
    rec.input(&a.crit);
    emit_report(&a.out, &result, rec)
}

/// `--confusion` file: a bare matrix (`{"k", "counts"}` or a plain count
/// table) or one bundled with ground-truth critical flags.
#[derive(Deserialize)]
#[serde(untagged)]
enum ConfusionFile {
    Bundle { confusion: Box<ConfusionFile>, critical: Vec<bool> },
    Matrix { counts: Vec<Vec<u64>> },
    Table(Vec<Vec<u64>>),
}

impl ConfusionFile {
    fn split(self) -> Result<(ConfusionMatrix, Option<Vec<bool>>)> {
        match self {
            ConfusionFile::Bundle { confusion, critical } => Ok((confusion.split()?.0, Some(critical))),
            ConfusionFile::Matrix { counts } | ConfusionFile::Table(counts) => {
                Ok((ConfusionMatrix::from_counts(counts)?, None))
            }
        }
    }
}

fn bounds(ctx: &Ctx, a: &BoundsArgs) -> Result<()> {
    if a.alpha.is_empty() {
        return Err(Error::InvalidConfig("at least one --alpha is required".into()));
    }
    let (confusion, flags) = read_json::<ConfusionFile>(&a.confusion)?.split()?;
    let critical = match (&a.critical, flags) {
        (Some(idx), _) => {
            let mut c = vec![false; confusion.k()];
            for &i in idx {
                *c.get_mut(i)
                    .ok_or_else(|| Error::OutOfRange(format!("critical index {i} outside 0..{}", confusion.k())))? = true;
            }
            c
        }
        (None, Some(c)) => c,
        (None, None) => {
            return Err(Error::InvalidConfig(
                "critical classes missing: pass --critical or bundle `critical` flags".into(),
            ))
        }
    };
    let taus = parse_tau_range(&a.taus)?;
    let seed = ctx.seed(0);
    let rows = beta_criticality_sweep(&confusion, &critical, &a.alpha, &taus, a.samples, seed)?;
    let mut body = String::from("alpha,tau,fpr_bound,fnr_bound,fpr_i,fpr_h\n");
    for r in &rows {
        let _ = writeln!(body, "{:?},{:?},{:?},{:?},{:?},{:?}", r.alpha, r.tau, r.fpr_bound, r.fnr_bound, r.fpr_i, r.fpr_h);
    }
    let mut rec = ctx.recorder(seed);
    rec.config(&serde_json::json!({
        "alpha": a.alpha,
        "taus": taus,
        "samples": a.samples,
        "critical": critical,
    }));
    rec.input(&a.confusion);
    emit(&a.out, body.as_bytes(), rec)
}

fn intensity_study(ctx: &Ctx, a: &StudyArgs) -> Result<()> {
    let methods: Vec<IntensityMethod> = a.methods.iter().map(|m| IntensityMethod::parse(m)).collect::<Result<_>>()?;
    let cfg = study_config(ctx, a.spec_lo, a.spec_hi)?;
    let data = load_dataset(&a.dataset)?;
    let study = run_intensity_study(&data.samples, &methods, &cfg)?;
    for m in &study.methods {
        ctx.log(format!("{}: F={:.3} p={:.3e}", m.method.name(), m.anova.f, m.anova.p));
    }
    let mut rec = ctx.recorder(cfg.seed);
    rec.config(&cfg);
    rec.input(&a.dataset);
    emit_report(&a.out, &study, rec)
}
