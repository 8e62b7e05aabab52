//! Acceptance criteria, one test per criterion. Each prints a single
//! `ACCEPTANCE <n> PASS|FAIL ...` line straight to stdout (bypassing the
//! harness capture) and then asserts.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use hfpc::bounds::{beta_criticality_sweep, measure_theorem1, theorem2_decompose, ComponentDistributions, IntensityDist, PatternSampler};
use hfpc::classify::{ClassifierKind, ConfusionMatrix};
use hfpc::eval::{run_classifier_benchmark, run_intensity_study, run_threshold_sweep, ExperimentConfig, FeatureTable, StudyConfig};
use hfpc::features::{hog_features, lbp_histogram, rlbp_histogram, FeatureConfig, LBP_BINS, RLBP_BINS};
use hfpc::health::{decide, loss};
use hfpc::intensity::{morans_i, Adjacency, IntensityMethod};
use hfpc::model::{CriticalityModel, PatternVector, ProcessState, Wafermap};
use hfpc::rng::{derive_seed, stream, StreamRng};
use hfpc::stats::{one_way_anova, pooled_t_statistic};
use hfpc::synth::{generate_dataset, generate_intensity_study, GeneratorConfig, ShapeKind};
use rand::Rng;

const ROOT_SEED: u64 = 20_240_601;

// criteria 1-2
const BOUND_MODELS: usize = 100;
const BOUND_SAMPLES: usize = 100_000;
const BOUND_SIGMAS: f64 = 3.0;
// criterion 3
const DECOMPOSITION_MODELS: usize = 1000;
const DECOMPOSITION_TOL: f64 = 1e-12;
// criterion 4
const BENCH_RUNS: usize = 20;
const RF_MIN_MACRO_F1: f64 = 0.95;
const NB_MIN_MACRO_F1: f64 = 0.90;
// criterion 5
const SWEEP_PEAK_MIN: f64 = 0.95;
const SWEEP_PEAK_MAX_SD: f64 = 0.05;
const SWEEP_BAND_LEVEL: f64 = 0.90;
const SWEEP_BAND_MIN_WIDTH: f64 = 0.1;
// criterion 6
const STUDY_GROUPS: [usize; 3] = [73, 20, 77];
const HF_ANOVA_MAX_P: f64 = 1e-5;
const HF_TUKEY_MAX_P: f64 = 1e-3;
const YFAIL_MIN_P: f64 = 1e-1;
// criterion 7
const BETA_ALPHAS: [f64; 4] = [2.0, 5.0, 10.0, 50.0];
const BETA_TAU: f64 = 0.1;
// criterion 9
const AFFINE_TOL: f64 = 1e-12;
const NORMALIZATION_TOL: f64 = 1e-12;
const F_T2_TOL: f64 = 1e-9;

fn verdict(n: u32, title: &str, pass: bool, elapsed: Duration, limit: Duration, detail: &str) {
    let in_time = elapsed <= limit;
    let ok = pass && in_time;
    let line = format!(
        "ACCEPTANCE {n:>2} {} {title}: {detail} [{:.1}s of {:.0}s]",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs_f64()
    );
    let _ = writeln!(std::io::stdout().lock(), "{line}");
    assert!(ok, "{line}");
}

fn log_uniform(rng: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Random diagonal-heavy confusion matrix with at least one critical and one
/// uncritical true class.
fn random_confusion(rng: &mut StreamRng, k: usize) -> (ConfusionMatrix, Vec<bool>) {
    let counts: Vec<Vec<u64>> = (0..k)
        .map(|t| (0..k).map(|p| if t == p { rng.random_range(20..200) } else { rng.random_range(0..30) }).collect())
        .collect();
    let mut critical: Vec<bool> = (0..k).map(|_| rng.random_bool(0.5)).collect();
    critical[0] = false;
    critical[1] = true;
    (ConfusionMatrix::from_counts(counts).unwrap(), critical)
}

fn random_component_model(seed: u64, m: usize) -> ComponentDistributions {
    let mut rng = stream(seed, "acceptance/component-model", m as u64);
    let k = rng.random_range(2..=8);
    let (conf, critical) = random_confusion(&mut rng, k);
    let mut beta = || IntensityDist::Beta {
        a: log_uniform(&mut rng, 0.5, 8.0),
        b: log_uniform(&mut rng, 0.5, 8.0),
    };
    let (i0, i1) = (beta(), beta());
    let criticality = if rng.random_bool(0.5) {
        CriticalityModel::beta(log_uniform(&mut rng, 1.5, 20.0), critical.clone()).unwrap()
    } else {
        CriticalityModel::deterministic((0..k).map(|_| rng.random::<f64>()).collect()).unwrap()
    };
    ComponentDistributions {
        intensity_uncritical: i0,
        intensity_critical: i1,
        patterns: PatternSampler::from_confusion(&conf, &critical).unwrap(),
        criticality,
    }
}

fn bound_taus() -> Vec<f64> {
    (1..=19).map(|k| k as f64 * 0.05).collect()
}

#[derive(Default)]
struct Violations {
    models: usize,
    points: usize,
    worst: Option<(usize, f64, f64, f64)>,
}

impl Violations {
    fn record(&mut self, model: usize, idx: &[usize], taus: &[f64], observed: &[f64], bound: &[f64]) {
        if idx.is_empty() {
            return;
        }
        self.models += 1;
        self.points += idx.len();
        for &k in idx {
            let excess = observed[k] - bound[k];
            if self.worst.is_none_or(|w| excess > w.3 - w.2) {
                self.worst = Some((model, taus[k], bound[k], observed[k]));
            }
        }
    }

    fn describe(&self, what: &str) -> String {
        match self.worst {
            None => format!("no {what} violations"),
            Some((m, tau, bound, obs)) => format!(
                "{} of {BOUND_MODELS} models, {} grid points violated; worst model {m} at tau={tau:.2}: {what}={obs:.4} vs bound {bound:.4}",
                self.models, self.points
            ),
        }
    }
}

#[test]
fn criterion_01_fnr_bound() {
    let t0 = Instant::now();
    let taus = bound_taus();
    let mut v = Violations::default();
    for m in 0..BOUND_MODELS {
        let dists = random_component_model(ROOT_SEED, m);
        let check = measure_theorem1(&dists, &taus, BOUND_SAMPLES, derive_seed(ROOT_SEED, "acceptance/c1", m as u64)).unwrap();
        let idx: Vec<usize> = (0..taus.len())
            .filter(|&k| check.fnr[k] > taus[k] + BOUND_SIGMAS * check.fnr_se[k])
            .collect();
        v.record(m, &idx, &taus, &check.fnr, &taus);
    }
    verdict(1, "FNR <= tau + 3 SE", v.models == 0, t0.elapsed(), Duration::from_secs(120), &v.describe("FNR"));
}

#[test]
fn criterion_02_fpr_bound() {
    let t0 = Instant::now();
    let taus = bound_taus();
    let mut v = Violations::default();
    for m in 0..BOUND_MODELS {
        let dists = random_component_model(ROOT_SEED, m);
        let check = measure_theorem1(&dists, &taus, BOUND_SAMPLES, derive_seed(ROOT_SEED, "acceptance/c2", m as u64)).unwrap();
        let bound: Vec<f64> = (0..taus.len()).map(|k| (1.0 - taus[k]) * check.fpr_i[k] * check.fpr_h[k]).collect();
        let idx: Vec<usize> = (0..taus.len())
            .filter(|&k| check.fpr[k] > bound[k] + BOUND_SIGMAS * check.fpr_se[k])
            .collect();
        v.record(m, &idx, &taus, &check.fpr, &bound);
    }
    verdict(
        2,
        "FPR <= (1-tau) FPR_i FPR_H + 3 SE",
        v.models == 0,
        t0.elapsed(),
        Duration::from_secs(120),
        &v.describe("FPR"),
    );
}

/// `P(H > tau | c=0)` by enumerating patterns, without the split.
fn direct_tail(patterns: &[(PatternVector, f64)], model: &CriticalityModel, tau: f64) -> f64 {
    patterns
        .iter()
        .map(|(p, q)| {
            let tail = match model {
                CriticalityModel::Deterministic { levels, .. } => {
                    let h = p.bits().iter().zip(levels).filter(|(b, _)| **b).map(|(_, h)| *h).fold(0.0, f64::max);
                    f64::from(u8::from(h > tau))
                }
                CriticalityModel::BetaStochastic { alpha, critical } => {
                    if p.bits().iter().zip(critical).any(|(b, c)| *b && *c) {
                        1.0 - tau.powf(*alpha)
                    } else {
                        (1.0 - tau).powf(*alpha)
                    }
                }
            };
            q * tail
        })
        .sum()
}

#[test]
fn criterion_03_decomposition_identity() {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for m in 0..DECOMPOSITION_MODELS {
        let mut rng = stream(ROOT_SEED, "acceptance/c3", m as u64);
        let k = rng.random_range(1..=8);
        let multi = rng.random_bool(0.5);
        let mut patterns: Vec<(PatternVector, f64)> = Vec::new();
        for j in 0..k {
            let p = if multi {
                let mut bits: Vec<bool> = (0..k).map(|_| rng.random_bool(0.3)).collect();
                bits[j] = true;
                PatternVector::multi_label(bits).unwrap()
            } else {
                PatternVector::one_hot(k, j).unwrap()
            };
            patterns.push((p, rng.random_range(0.01..1.0)));
        }
        let total: f64 = patterns.iter().map(|(_, q)| q).sum();
        patterns.iter_mut().for_each(|(_, q)| *q /= total);
        let model = if rng.random_bool(0.5) {
            CriticalityModel::deterministic((0..k).map(|_| rng.random::<f64>()).collect()).unwrap()
        } else {
            CriticalityModel::beta(rng.random_range(1.01..30.0), (0..k).map(|_| rng.random_bool(0.5)).collect()).unwrap()
        };
        let tau = rng.random::<f64>();
        let d = theorem2_decompose(&patterns, &model, tau).unwrap();
        let oracle = direct_tail(&patterns, &model, tau);
        worst = worst.max((d.total - oracle).abs()).max((d.term_critical + d.term_uncritical - d.total).abs());
    }
    verdict(
        3,
        "decomposition total equals direct enumeration",
        worst <= DECOMPOSITION_TOL,
        t0.elapsed(),
        Duration::from_secs(30),
        &format!("{DECOMPOSITION_MODELS} models, max |diff| = {worst:.2e} (tol {DECOMPOSITION_TOL:.0e})"),
    );
}

/// 2000 maps, 400 of each of the five types, with features; built once and
/// shared by criteria 4 and 5.
fn corpus() -> &'static (FeatureTable, Duration) {
    static TABLE: OnceLock<(FeatureTable, Duration)> = OnceLock::new();
    TABLE.get_or_init(|| {
        let t0 = Instant::now();
        let gen = GeneratorConfig {
            seed: ROOT_SEED,
            count_per_type: 400,
            ..Default::default()
        };
        let samples = generate_dataset(&gen).unwrap();
        assert_eq!(samples.len(), 2000);
        let table = FeatureTable::from_samples(&samples, &gen.registry(), &FeatureConfig::default()).unwrap();
        (table, t0.elapsed())
    })
}

fn experiment() -> ExperimentConfig {
    ExperimentConfig {
        runs: BENCH_RUNS,
        train_per_class: 100,
        test_per_class: 100,
        seed: ROOT_SEED,
        ..Default::default()
    }
}

#[test]
fn criterion_04_classifier_benchmark() {
    let t0 = Instant::now();
    let (table, _) = corpus();
    let res = run_classifier_benchmark(table, &[ClassifierKind::RandomForest, ClassifierKind::NaiveBayes], &experiment()).unwrap();
    let rf = res.kind(ClassifierKind::RandomForest).unwrap().macro_f1.mean;
    let nb = res.kind(ClassifierKind::NaiveBayes).unwrap().macro_f1.mean;
    verdict(
        4,
        "classifier benchmark",
        rf >= RF_MIN_MACRO_F1 && nb >= NB_MIN_MACRO_F1,
        t0.elapsed(),
        Duration::from_secs(15 * 60),
        &format!("RF macro-F1 {rf:.4} (>= {RF_MIN_MACRO_F1}), NB {nb:.4} (>= {NB_MIN_MACRO_F1}), {BENCH_RUNS} runs of 100/100"),
    );
}

#[test]
fn criterion_05_threshold_sweep() {
    let t0 = Instant::now();
    let (table, _) = corpus();
    // ring fully critical, edge-zone and center-spot half, the rest benign
    let levels = |k: ShapeKind| match k {
        ShapeKind::Ring => 1.0,
        ShapeKind::EdgeZone | ShapeKind::CenterSpot => 0.5,
        ShapeKind::Gradient | ShapeKind::ScratchLine => 0.0,
    };
    let crit = CriticalityModel::deterministic(
        table
            .registry
            .names()
            .iter()
            .map(|n| levels(n.parse::<ShapeKind>().unwrap()))
            .collect(),
    )
    .unwrap();
    let sweep = run_threshold_sweep(table, ClassifierKind::RandomForest, &crit, &experiment()).unwrap();
    assert_eq!(sweep.points.len(), 101);
    let peak = sweep.points.iter().max_by(|a, b| a.f1.mean.total_cmp(&b.f1.mean)).unwrap();
    let mut band = 0.0f64;
    let mut start: Option<f64> = None;
    for p in &sweep.points {
        if p.f1.mean >= SWEEP_BAND_LEVEL {
            let s = *start.get_or_insert(p.tau);
            band = band.max(p.tau - s);
        } else {
            start = None;
        }
    }
    verdict(
        5,
        "threshold sweep robustness",
        peak.f1.mean >= SWEEP_PEAK_MIN && peak.f1.sd <= SWEEP_PEAK_MAX_SD && band >= SWEEP_BAND_MIN_WIDTH - 1e-9,
        t0.elapsed(),
        Duration::from_secs(10 * 60),
        &format!(
            "peak mean F1 {:.4} sd {:.4} at tau={:.2}; widest band with mean F1 >= {SWEEP_BAND_LEVEL} has width {band:.2}",
            peak.f1.mean, peak.f1.sd, peak.tau
        ),
    );
}

#[test]
fn criterion_06_intensity_study() {
    let t0 = Instant::now();
    let gen = GeneratorConfig {
        seed: ROOT_SEED,
        pattern_types: vec![ShapeKind::Ring],
        ..Default::default()
    };
    let samples = generate_intensity_study(&gen, STUDY_GROUPS).unwrap();
    assert_eq!(samples.len(), 170);
    // limits wide enough that every die is in spec
    let cfg = StudyConfig::in_spec_for(&gen);
    let study = run_intensity_study(&samples, &[IntensityMethod::HfMoran, IntensityMethod::Yfail], &cfg).unwrap();
    let hf = study.method(IntensityMethod::HfMoran).unwrap();
    let yf = study.method(IntensityMethod::Yfail).unwrap();
    let tukey_max = hf.tukey.iter().map(|t| t.p).fold(0.0, f64::max);
    verdict(
        6,
        "intensity study",
        hf.anova.p < HF_ANOVA_MAX_P && hf.tukey.len() == 3 && tukey_max < HF_TUKEY_MAX_P && yf.anova.p > YFAIL_MIN_P,
        t0.elapsed(),
        Duration::from_secs(120),
        &format!(
            "HF ANOVA p={:.2e}, max Tukey p={tukey_max:.2e}; YFAIL ANOVA p={:.3}",
            hf.anova.p, yf.anova.p
        ),
    );
}

#[test]
fn criterion_07_beta_sweep() {
    let t0 = Instant::now();
    let counts = vec![
        vec![97, 2, 1, 0, 0],
        vec![1, 96, 0, 2, 1],
        vec![0, 1, 98, 1, 0],
        vec![2, 0, 1, 95, 2],
        vec![0, 1, 0, 1, 98],
    ];
    let conf = ConfusionMatrix::from_counts(counts).unwrap();
    let diag = (0..5).map(|j| conf.get(j, j)).sum::<u64>() as f64 / conf.total() as f64;
    assert!(diag >= 0.95);
    let critical = vec![true, true, false, true, false];
    let rows = beta_criticality_sweep(&conf, &critical, &BETA_ALPHAS, &[BETA_TAU], BOUND_SAMPLES, ROOT_SEED).unwrap();
    let fpr: Vec<f64> = rows.iter().map(|r| r.fpr_bound).collect();
    let decreasing = fpr.windows(2).all(|w| w[1] < w[0]);
    let fnr_is_tau = rows.iter().all(|r| r.fnr_bound == r.tau);
    let all_taus = hfpc::bounds::parse_tau_range("0:1:0.05").unwrap();
    let full = beta_criticality_sweep(&conf, &critical, &BETA_ALPHAS, &all_taus, 20_000, ROOT_SEED).unwrap();
    let fnr_everywhere = full.iter().all(|r| r.fnr_bound == r.tau);
    verdict(
        7,
        "Beta-criticality sweep",
        decreasing && fnr_is_tau && fnr_everywhere,
        t0.elapsed(),
        Duration::from_secs(60),
        &format!("diag mass {diag:.3}; FPR bound at tau={BETA_TAU} over alpha {BETA_ALPHAS:?}: {fpr:.4?}; fnr_bound == tau: {}", fnr_is_tau && fnr_everywhere),
    );
}

#[test]
fn criterion_08_decision_oracle() {
    let t0 = Instant::now();
    // dyadic grid keeps every expectation exact, so ties are real ties
    let grid: Vec<f64> = (0..=16).map(|k| k as f64 / 16.0).collect();
    let pattern = PatternVector::one_hot(1, 0).unwrap();
    let state = |hf: f64| ProcessState::new(hf, pattern.clone(), 1.0).unwrap();
    let mut cases = 0usize;
    let mut mismatches = 0usize;
    for &a in &grid {
        for &b in &grid {
            for &q in &grid {
                for &tau in &grid {
                    let (sa, sb) = (state(a), state(b));
                    let expected = |act: bool| q * loss(act, &sa, tau) + (1.0 - q) * loss(act, &sb, tau);
                    // ties go to doing nothing
                    let brute = expected(true) < expected(false);
                    let e_hf = q * a + (1.0 - q) * b;
                    if decide(e_hf, tau) != brute {
                        mismatches += 1;
                    }
                    cases += 1;
                }
            }
        }
    }
    verdict(
        8,
        "decision rule equals brute-force loss minimiser",
        mismatches == 0 && cases >= 10_000,
        t0.elapsed(),
        Duration::from_secs(10),
        &format!("{mismatches} mismatches over {cases} two-point distributions"),
    );
}

fn random_map(index: u64) -> Wafermap {
    let mut rng = stream(ROOT_SEED, "acceptance/c9/map", index);
    let w = rng.random_range(8..40usize);
    let h = rng.random_range(8..40usize);
    let values: Vec<f64> = (0..w * h).map(|_| rng.random_range(-5.0..5.0)).collect();
    Wafermap::from_fn_disc(w, h, |x, y| values[y * w + x]).unwrap()
}

#[test]
fn criterion_09_numerical_cross_checks() {
    let t0 = Instant::now();
    let mut moran_err = 0.0f64;
    let mut hist_err = 0.0f64;
    let mut hog_ok = true;
    let mut f_err = 0.0f64;
    for n in 0..100u64 {
        let w = random_map(n);
        let mut rng = stream(ROOT_SEED, "acceptance/c9/affine", n);
        let (a, b) = (rng.random_range(0.01..100.0), rng.random_range(-100.0..100.0));
        let moved = w.map_values(|v| a * v + b).unwrap();
        moran_err = moran_err.max((morans_i(&w, Adjacency::Rook).unwrap() - morans_i(&moved, Adjacency::Rook).unwrap()).abs());

        let lbp = lbp_histogram(&w).unwrap();
        let rlbp = rlbp_histogram(&w).unwrap();
        hog_ok &= lbp.len() == LBP_BINS && rlbp.len() == RLBP_BINS;
        hog_ok &= lbp.iter().chain(&rlbp).all(|&v| v >= 0.0);
        hist_err = hist_err.max((lbp.iter().sum::<f64>() - 1.0).abs()).max((rlbp.iter().sum::<f64>() - 1.0).abs());
        let hog = hog_features(&w, (8, 8), 9).unwrap();
        hog_ok &= hog.len() == 8 * 8 * 9;
        hog_ok &= hog.chunks(9).all(|c| c.iter().all(|&v| v >= 0.0) && c.iter().map(|v| v * v).sum::<f64>() <= 1.0 + NORMALIZATION_TOL);

        let mut rng = stream(ROOT_SEED, "acceptance/c9/anova", n);
        let na = rng.random_range(2..40);
        let nb = rng.random_range(2..40);
        let shift = rng.random_range(-2.0..2.0);
        let g1: Vec<f64> = (0..na).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g2: Vec<f64> = (0..nb).map(|_| rng.random_range(-1.0..1.0) + shift).collect();
        let t = pooled_t_statistic(&g1, &g2);
        let f = one_way_anova(&[g1, g2]).unwrap().f;
        f_err = f_err.max((f - t * t).abs() / f.max(1.0));
    }
    verdict(
        9,
        "numerical cross-checks",
        moran_err <= AFFINE_TOL && hist_err <= NORMALIZATION_TOL && hog_ok && f_err <= F_T2_TOL,
        t0.elapsed(),
        Duration::from_secs(60),
        &format!(
            "Moran affine max diff {moran_err:.1e}; LBP/RLBP sum error {hist_err:.1e}; HOG/shape invariants {}; max |F - t^2| (rel) {f_err:.1e}",
            if hog_ok { "hold" } else { "broken" }
        ),
    );
}

fn hfpc(jobs: usize, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_hfpc"))
        .arg("--jobs")
        .arg(jobs.to_string())
        .arg("--seed")
        .arg(ROOT_SEED.to_string())
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "hfpc {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

/// synth -> features -> train -> eval -> hf -> score -> sweep -> bounds.
fn pipeline(dir: &Path, jobs: usize) {
    let p = |name: &str| dir.join(name).display().to_string();
    std::fs::write(dir.join("crit.json"), r#"{"ring":1,"edge-zone":0.5,"gradient":0,"center-spot":0.5,"scratch-line":0}"#).unwrap();
    std::fs::write(
        dir.join("conf.json"),
        r#"{"confusion":{"counts":[[48,1,1],[2,47,1],[0,1,49]]},"critical":[true,false,true]}"#,
    )
    .unwrap();
    hfpc(jobs, &["synth", "--per-type", "60", "--width", "48", "--height", "48", "--out", &p("data")]);
    let manifest = p("data/manifest.json");
    hfpc(jobs, &["features", "--dataset", &manifest, "--out", &p("features.csv")]);
    hfpc(jobs, &["train", "--kind", "rf", "--features", &p("features.csv"), "--out", &p("model.json")]);
    hfpc(jobs, &["eval", "--model", &p("model.json"), "--features", &p("features.csv"), "--report", &p("report.json")]);
    hfpc(
        jobs,
        &["hf", "--model", &p("model.json"), "--criticality", &p("crit.json"), "--tau", "0.2", "--dataset", &manifest, "--out", &p("reports.jsonl")],
    );
    hfpc(jobs, &["score", "--method", "iso", "--dataset", &manifest, "--out", &p("scores.csv")]);
    hfpc(
        jobs,
        &[
            "sweep", "--dataset", &manifest, "--clf", "rf", "--crit", &p("crit.json"), "--taus", "0:1:0.01", "--runs", "5", "--train", "30",
            "--test", "30", "--out", &p("sweep.csv"),
        ],
    );
    hfpc(
        jobs,
        &["bounds", "--confusion", &p("conf.json"), "--alpha", "2,5,10", "--taus", "0:1:0.05", "--samples", "20000", "--out", &p("bounds.csv")],
    );
}

/// Every output except run manifests, which carry wall time and paths.
fn outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if !path.to_string_lossy().ends_with(".manifest.json") {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_10_end_to_end_determinism() {
    let t0 = Instant::now();
    let runs: Vec<(usize, tempfile::TempDir)> = [1usize, 8, 8].into_iter().map(|j| (j, tempfile::tempdir().unwrap())).collect();
    for (jobs, dir) in &runs {
        pipeline(dir.path(), *jobs);
    }
    let reference = outputs(runs[0].1.path());
    let mut differing: Vec<String> = Vec::new();
    for (jobs, dir) in &runs[1..] {
        let other = outputs(dir.path());
        if other.keys().ne(reference.keys()) {
            differing.push(format!("file sets differ at --jobs {jobs}"));
        }
        for (name, bytes) in &reference {
            if other.get(name) != Some(bytes) {
                differing.push(format!("{name} (--jobs {jobs})"));
            }
        }
    }
    let manifests_present = ["features.csv", "model.json", "sweep.csv", "bounds.csv"]
        .iter()
        .all(|f| runs[0].1.path().join(format!("{f}.manifest.json")).exists());
    verdict(
        10,
        "end-to-end determinism across --jobs 1 and --jobs 8",
        differing.is_empty() && manifests_present && reference.len() > 8,
        t0.elapsed(),
        Duration::from_secs(20 * 60),
        &format!(
            "{} output files compared over 3 pipeline runs; {}",
            reference.len(),
            if differing.is_empty() { "all byte-identical".to_string() } else { format!("differing: {differing:?}") }
        ),
    );
}
