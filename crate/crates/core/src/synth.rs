//! Synthetic wafermap corpora and dataset manifests.
//!
//! Each map is `amplitude * shape + noise` on the inscribed disc, where the
//! shape is one of five archetypes valued in `[0, 1]`, the amplitude is
//! `intensity * scale(kind) * noise_sigma`, and the noise is i.i.d. Gaussian.
//! Shape jitter and noise come from separate named streams so the clean
//! signal of a sample does not depend on its intensity or noise level.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{disc_mask, IntensityGrade, LabeledSample, PatternRegistry, PatternVector, Wafermap};
use crate::rng::{stream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Ring,
    EdgeZone,
    Gradient,
    CenterSpot,
    ScratchLine,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [
        ShapeKind::Ring,
        ShapeKind::EdgeZone,
        ShapeKind::Gradient,
        ShapeKind::CenterSpot,
        ShapeKind::ScratchLine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Ring => "ring",
            ShapeKind::EdgeZone => "edge-zone",
            ShapeKind::Gradient => "gradient",
            ShapeKind::CenterSpot => "center-spot",
            ShapeKind::ScratchLine => "scratch-line",
        }
    }

    /// Peak amplitude at intensity 1, in units of the noise sigma. Chosen so
    /// the clean signal has about the same spread over the disc (roughly 1.6
    /// noise sigmas at intensity 1) whatever the shape covers.
    pub fn amplitude_scale(self) -> f64 {
        match self {
            ShapeKind::Ring => 5.0,
            ShapeKind::EdgeZone => 5.0,
            ShapeKind::Gradient => 6.5,
            ShapeKind::CenterSpot => 8.0,
            ShapeKind::ScratchLine => 9.0,
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownPatternName(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub width: usize,
    pub height: usize,
    pub pattern_types: Vec<ShapeKind>,
    pub intensity: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub count_per_type: usize,
    /// Types whose samples are labelled critical.
    #[serde(default)]
    pub critical: Vec<ShapeKind>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            width: 64,
            height: 64,
            pattern_types: ShapeKind::ALL.to_vec(),
            intensity: 0.8,
            noise_sigma: 1.0,
            seed: 0,
            count_per_type: 400,
            critical: Vec::new(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.width < 2 || self.height < 2 {
            return bad(format!("grid {}x{} too small", self.width, self.height));
        }
        if self.pattern_types.is_empty() {
            return bad("no pattern types selected".into());
        }
        let mut seen = self.pattern_types.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.pattern_types.len() {
            return bad("duplicate pattern types".into());
        }
        if !(0.0..=1.0).contains(&self.intensity) {
            return bad(format!("intensity {} outside [0,1]", self.intensity));
        }
        if !(self.noise_sigma > 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("noise sigma {} must be positive", self.noise_sigma));
        }
        if self.count_per_type == 0 {
            return bad("count_per_type must be >= 1".into());
        }
        Ok(())
    }

    /// Registry whose class order follows `pattern_types`.
    pub fn registry(&self) -> PatternRegistry {
        PatternRegistry::new(self.pattern_types.iter().map(|k| k.name())).expect("validated types are unique")
    }
}

/// Per-sample shape jitter.
#[derive(Debug, Clone, Copy)]
enum ShapeParams {
    Ring { radius: f64, width: f64 },
    EdgeZone { inner: f64 },
    Gradient { angle: f64 },
    CenterSpot { cx: f64, cy: f64, sigma: f64 },
    ScratchLine { angle: f64, offset: f64, half_length: f64 },
}

fn draw_params(kind: ShapeKind, rng: &mut StreamRng) -> ShapeParams {
    match kind {
        ShapeKind::Ring => ShapeParams::Ring {
            radius: rng.random_range(0.42..0.58),
            width: rng.random_range(0.08..0.12),
        },
        ShapeKind::EdgeZone => ShapeParams::EdgeZone {
            inner: rng.random_range(0.68..0.78),
        },
        ShapeKind::Gradient => ShapeParams::Gradient {
            angle: rng.random_range(0.0..2.0 * PI),
        },
        ShapeKind::CenterSpot => ShapeParams::CenterSpot {
            cx: rng.random_range(-0.1..0.1),
            cy: rng.random_range(-0.1..0.1),
            sigma: rng.random_range(0.18..0.26),
        },
        ShapeKind::ScratchLine => ShapeParams::ScratchLine {
            angle: rng.random_range(0.0..PI),
            offset: rng.random_range(-0.3..0.3),
            half_length: rng.random_range(0.6..0.8),
        },
    }
}

/// Shape value in `[0, 1]` at normalized disc coordinates `(u, v)`.
fn shape_value(p: ShapeParams, u: f64, v: f64) -> f64 {
    let r = (u * u + v * v).sqrt();
    match p {
        ShapeParams::Ring { radius, width } => (-((r - radius) / width).powi(2)).exp(),
        ShapeParams::EdgeZone { inner } => ((r - inner) / (1.0 - inner)).clamp(0.0, 1.0),
        ShapeParams::Gradient { angle } => ((1.0 + u * angle.cos() + v * angle.sin()) / 2.0).clamp(0.0, 1.0),
        ShapeParams::CenterSpot { cx, cy, sigma } => {
            let d2 = (u - cx).powi(2) + (v - cy).powi(2);
            (-d2 / (2.0 * sigma * sigma)).exp()
        }
        ShapeParams::ScratchLine {
            angle,
            offset,
            half_length,
        } => {
            let (s, c) = angle.sin_cos();
            let across = -u * s + v * c - offset;
            let along = u * c + v * s;
            if along.abs() > half_length {
                0.0
            } else {
                (-(across / 0.06).powi(2)).exp()
            }
        }
    }
}

fn render(p: ShapeParams, width: usize, height: usize, mask: &[bool], amplitude: f64) -> Vec<f64> {
    let r = width.min(height) as f64 / 2.0;
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if mask[i] {
                let u = (x as f64 + 0.5 - cx) / r;
                let v = (y as f64 + 0.5 - cy) / r;
                out[i] = amplitude * shape_value(p, u, v);
            }
        }
    }
    out
}

fn noisy_map(width: usize, height: usize, mut values: Vec<f64>, mask: Vec<bool>, sigma: f64, rng: &mut StreamRng) -> Result<Wafermap> {
    for (v, &m) in values.iter_mut().zip(&mask) {
        if m {
            let z: f64 = rng.sample(StandardNormal);
            *v += sigma * z;
        }
    }
    Wafermap::new(width, height, values, mask)
}

fn dataset_streams(cfg: &GeneratorConfig, kind: ShapeKind, replicate: usize) -> (StreamRng, StreamRng) {
    let shape = stream(cfg.seed, &format!("synth/shape/{}", kind.name()), replicate as u64);
    let noise = stream(cfg.seed, &format!("synth/noise/{}", kind.name()), replicate as u64);
    (shape, noise)
}

/// Noise-free signal of replicate `replicate` of `kind`, exactly as used by
/// [`generate_dataset`].
pub fn signal_map(cfg: &GeneratorConfig, kind: ShapeKind, replicate: usize) -> Vec<f64> {
    let (mut shape_rng, _) = dataset_streams(cfg, kind, replicate);
    let params = draw_params(kind, &mut shape_rng);
    let mask = disc_mask(cfg.width, cfg.height);
    render(params, cfg.width, cfg.height, &mask, cfg.intensity * kind.amplitude_scale() * cfg.noise_sigma)
}

/// Generates `count_per_type` maps of every selected pattern type.
pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<Vec<LabeledSample>> {
    cfg.validate()?;
    let k = cfg.pattern_types.len();
    let n = k * cfg.count_per_type;
    (0..n)
        .into_par_iter()
        .map(|j| {
            let t = j / cfg.count_per_type;
            let replicate = j % cfg.count_per_type;
            let kind = cfg.pattern_types[t];
            let (mut shape_rng, mut noise_rng) = dataset_streams(cfg, kind, replicate);
            let params = draw_params(kind, &mut shape_rng);
            let mask = disc_mask(cfg.width, cfg.height);
            let amplitude = cfg.intensity * kind.amplitude_scale() * cfg.noise_sigma;
            let signal = render(params, cfg.width, cfg.height, &mask, amplitude);
            let wafermap = noisy_map(cfg.width, cfg.height, signal, mask, cfg.noise_sigma, &mut noise_rng)?;
            Ok(LabeledSample {
                wafermap,
                true_pattern: PatternVector::one_hot(k, t)?,
                critical: cfg.critical.contains(&kind),
                grade: None,
            })
        })
        .collect()
}

/// Relative amplitude used for each expert grade.
pub fn grade_intensity(grade: IntensityGrade) -> f64 {
    match grade {
        IntensityGrade::Weak => 0.15,
        IntensityGrade::Mediocre => 0.4,
        IntensityGrade::Strong => 0.8,
    }
}

fn study_streams(cfg: &GeneratorConfig, grade: IntensityGrade, replicate: usize) -> (StreamRng, StreamRng) {
    let shape = stream(cfg.seed, &format!("study/shape/{}", grade.as_str()), replicate as u64);
    let noise = stream(cfg.seed, &format!("study/noise/{}", grade.as_str()), replicate as u64);
    (shape, noise)
}

fn study_kind(cfg: &GeneratorConfig) -> Result<ShapeKind> {
    cfg.validate()?;
    match cfg.pattern_types.as_slice() {
        [kind] => Ok(*kind),
        other => Err(Error::InvalidConfig(format!(
            "intensity study needs exactly one pattern type, got {}",
            other.len()
        ))),
    }
}

/// Noise-free signal of a study sample, as used by [`generate_intensity_study`].
pub fn study_signal_map(cfg: &GeneratorConfig, grade: IntensityGrade, replicate: usize) -> Result<Vec<f64>> {
    let kind = study_kind(cfg)?;
    let (mut shape_rng, _) = study_streams(cfg, grade, replicate);
    let params = draw_params(kind, &mut shape_rng);
    let mask = disc_mask(cfg.width, cfg.height);
    let amplitude = grade_intensity(grade) * kind.amplitude_scale() * cfg.noise_sigma;
    Ok(render(params, cfg.width, cfg.height, &mask, amplitude))
}

/// Graded samples of a single pattern type; `groups` holds the weak,
/// mediocre and strong counts. `cfg.intensity` is ignored.
pub fn generate_intensity_study(cfg: &GeneratorConfig, groups: [usize; 3]) -> Result<Vec<LabeledSample>> {
    let kind = study_kind(cfg)?;
    if groups.iter().sum::<usize>() == 0 {
        return Err(Error::InvalidConfig("intensity study needs at least one sample".into()));
    }
    let jobs: Vec<(IntensityGrade, usize)> = IntensityGrade::ALL
        .into_iter()
        .zip(groups)
        .flat_map(|(g, n)| (0..n).map(move |r| (g, r)))
        .collect();
    jobs.into_par_iter()
        .map(|(grade, replicate)| {
            let (mut shape_rng, mut noise_rng) = study_streams(cfg, grade, replicate);
            let params = draw_params(kind, &mut shape_rng);
            let mask = disc_mask(cfg.width, cfg.height);
            let amplitude = grade_intensity(grade) * kind.amplitude_scale() * cfg.noise_sigma;
            let signal = render(params, cfg.width, cfg.height, &mask, amplitude);
            let wafermap = noisy_map(cfg.width, cfg.height, signal, mask, cfg.noise_sigma, &mut noise_rng)?;
            Ok(LabeledSample {
                wafermap,
                true_pattern: PatternVector::one_hot(1, 0)?,
                critical: cfg.critical.contains(&kind),
                grade: Some(grade),
            })
        })
        .collect()
}

/// A labelled corpus together with the registry its labels index into.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub registry: PatternRegistry,
    pub samples: Vec<LabeledSample>,
    /// Wafermap file of each sample, relative to the manifest directory.
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub pattern: String,
    pub critical: u8,
    pub grade: Option<IntensityGrade>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Writes one JSON file per wafermap plus `manifest.json` into `dir`.
pub fn save_dataset(samples: &[LabeledSample], registry: &PatternRegistry, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let class = s.class_index().ok_or_else(|| {
            Error::InvalidConfig(format!("sample {i} is not single-label; manifests hold one pattern name"))
        })?;
        if class >= registry.k() {
            return Err(Error::OutOfRange(format!("class {class} outside registry of K={}", registry.k())));
        }
        let file = format!("wafer_{i:05}.json");
        let path = dir.join(&file);
        let body = serde_json::to_string(&s.wafermap).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            file,
            pattern: registry.name(class).to_string(),
            critical: u8::from(s.critical),
            grade: s.grade,
        });
    }
    let manifest = dir.join(MANIFEST_NAME);
    let body = serde_json::to_string_pretty(&entries).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(&manifest, body).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Loads a manifest, inferring the registry from pattern names in order of
/// first appearance.
pub fn load_dataset(manifest: &Path) -> Result<Dataset> {
    let entries = read_manifest(manifest)?;
    let mut names: Vec<String> = Vec::new();
    for e in &entries {
        if !names.contains(&e.pattern) {
            names.push(e.pattern.clone());
        }
    }
    if names.is_empty() {
        return Err(Error::Parse(format!("{}: empty manifest", manifest.display())));
    }
    let registry = PatternRegistry::new(names)?;
    load_entries(manifest, entries, registry)
}

/// Loads a manifest against a known registry; unknown names are an error.
pub fn load_dataset_with_registry(manifest: &Path, registry: &PatternRegistry) -> Result<Dataset> {
    let entries = read_manifest(manifest)?;
    load_entries(manifest, entries, registry.clone())
}

fn load_entries(manifest: &Path, entries: Vec<ManifestEntry>, registry: PatternRegistry) -> Result<Dataset> {
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut samples = Vec::with_capacity(entries.len());
    let mut files = Vec::with_capacity(entries.len());
    for e in entries {
        let class = registry.index_of(&e.pattern)?;
        let critical = match e.critical {
            0 => false,
            1 => true,
            other => return Err(Error::Parse(format!("critical must be 0 or 1, got {other}"))),
        };
        let path = base.join(&e.file);
        let text = fs::read_to_string(&path).map_err(|err| Error::io(&path, err))?;
        let wafermap: Wafermap =
            serde_json::from_str(&text).map_err(|err| Error::Parse(format!("{}: {err}", path.display())))?;
        samples.push(LabeledSample {
            wafermap,
            true_pattern: registry.one_hot(class)?,
            critical,
            grade: e.grade,
        });
        files.push(e.file);
    }
    Ok(Dataset {
        registry,
        samples,
        files,
    })
}
