//! Domain types shared by every stage of the pipeline: wafermaps, pattern
//! vectors and their registry, criticality models, and the reports produced
//! by scoring and bound estimation.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 2-D analog measurement grid with a validity mask.
///
/// Values are stored row-major (`y * width + x`). Masked-out cells may hold
/// any value, including non-finite ones; every masked-in value is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WafermapJson", into = "WafermapJson")]
pub struct Wafermap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl Wafermap {
    /// Builds a wafermap, checking every invariant.
    pub fn new(width: usize, height: usize, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let w = Wafermap {
            width,
            height,
            values,
            mask,
        };
        w.validate()?;
        Ok(w)
    }

    /// Builds a wafermap from a value function and the inscribed-disc mask.
    pub fn from_fn_disc(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mask = disc_mask(width, height);
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Wafermap::new(width, height, values, mask)
    }

    /// Re-checks all invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.width * self.height;
        if self.width == 0 || self.height == 0 {
            return Err(Error::DimensionMismatch(format!(
                "grid must be non-empty, got {}x{}",
                self.width, self.height
            )));
        }
        if self.values.len() != n || self.mask.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} grid needs {} cells, got {} values and {} mask entries",
                self.width,
                self.height,
                n,
                self.values.len(),
                self.mask.len()
            )));
        }
        let masked = self.mask.iter().filter(|&&m| m).count();
        if masked < 2 {
            return Err(Error::FewerThanTwoMaskedCells(masked));
        }
        for (idx, (&v, &m)) in self.values.iter().zip(&self.mask).enumerate() {
            if m && !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    x: idx % self.width,
                    y: idx / self.width,
                });
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.values[self.index(x, y)]
    }

    /// True if `(x, y)` lies on the grid and is masked in. Signed coordinates
    /// let neighbourhood code probe off-grid positions.
    #[inline]
    pub fn is_in(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.mask[y as usize * self.width + x as usize]
    }

    pub fn n_masked(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Masked-in values in row-major order.
    pub fn masked_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect()
    }

    /// Applies `f` to every masked-in value; the mask is unchanged.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = self
            .values
            .iter()
            .zip(&self.mask)
            .map(|(&v, &m)| if m { f(v) } else { v })
            .collect();
        Wafermap::new(self.width, self.height, values, self.mask.clone())
    }

    /// Replaces the values, keeping dimensions and mask.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Wafermap::new(self.width, self.height, values, self.mask.clone())
    }

    /// Rotates the grid (values and mask) by 90 degrees clockwise.
    pub fn rotate90(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let mut values = vec![0.0; w * h];
        let mut mask = vec![false; w * h];
        // new grid is h wide, w tall; (x, y) -> (h - 1 - y, x)
        for y in 0..h {
            for x in 0..w {
                let nx = h - 1 - y;
                let ny = x;
                values[ny * h + nx] = self.values[y * w + x];
                mask[ny * h + nx] = self.mask[y * w + x];
            }
        }
        Wafermap {
            width: h,
            height: w,
            values,
            mask,
        }
    }

    /// Mirrors the grid left-right.
    pub fn flip_horizontal(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let mut values = vec![0.0; w * h];
        let mut mask = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                values[y * w + (w - 1 - x)] = self.values[y * w + x];
                mask[y * w + (w - 1 - x)] = self.mask[y * w + x];
            }
        }
        Wafermap {
            width: w,
            height: h,
            values,
            mask,
        }
    }
}

/// Mask of the disc inscribed in a `width x height` grid: a cell is in when
/// its centre lies within `min(width, height) / 2` of the grid centre.
pub fn disc_mask(width: usize, height: usize) -> Vec<bool> {
    let cx = width as f64 / 2.0;
    let cy = height as f64 / 2.0;
    let r = width.min(height) as f64 / 2.0;
    let mut mask = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            mask.push(dx * dx + dy * dy <= r * r);
        }
    }
    mask
}

#[derive(Serialize, Deserialize)]
struct WafermapJson {
    width: usize,
    height: usize,
    values: Vec<Option<f64>>,
    mask: Vec<u8>,
}

impl TryFrom<WafermapJson> for Wafermap {
    type Error = Error;

    fn try_from(j: WafermapJson) -> Result<Self> {
        let mut mask = Vec::with_capacity(j.mask.len());
        for m in j.mask {
            match m {
                0 => mask.push(false),
                1 => mask.push(true),
                other => return Err(Error::Parse(format!("mask entries must be 0 or 1, got {other}"))),
            }
        }
        let values = j.values.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        Wafermap::new(j.width, j.height, values, mask)
    }
}

impl From<Wafermap> for WafermapJson {
    fn from(w: Wafermap) -> Self {
        WafermapJson {
            width: w.width,
            height: w.height,
            values: w
                .values
                .into_iter()
                .map(|v| if v.is_finite() { Some(v) } else { None })
                .collect(),
            mask: w.mask.into_iter().map(u8::from).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternMode {
    MultiLabel,
    OneHot,
}

/// Binary vector of detected pattern types over a registry of `K` types.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatternVector {
    bits: Vec<bool>,
    mode: PatternMode,
}

impl PatternVector {
    pub fn one_hot(k: usize, index: usize) -> Result<Self> {
        if index >= k {
            return Err(Error::OutOfRange(format!("class index {index} with K={k}")));
        }
        let mut bits = vec![false; k];
        bits[index] = true;
        Ok(PatternVector {
            bits,
            mode: PatternMode::OneHot,
        })
    }

    pub fn multi_label(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::OutOfRange("pattern vector must have K >= 1".into()));
        }
        Ok(PatternVector {
            bits,
            mode: PatternMode::MultiLabel,
        })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn mode(&self) -> PatternMode {
        self.mode
    }

    pub fn k(&self) -> usize {
        self.bits.len()
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Class index of a single-pattern vector.
    pub fn index(&self) -> Option<usize> {
        if self.popcount() == 1 {
            self.bits.iter().position(|&b| b)
        } else {
            None
        }
    }

    /// L1 distance between two bit vectors of equal length.
    pub fn l1_distance(&self, other: &PatternVector) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// Ordered set of known pattern types.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct PatternRegistry {
    names: Vec<String>,
}

impl PatternRegistry {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::InvalidConfig("pattern registry needs K >= 1".into()));
        }
        let unique: BTreeSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::InvalidConfig("pattern names must be unique".into()));
        }
        Ok(PatternRegistry { names })
    }

    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownPatternName(name.to_string()))
    }

    pub fn one_hot(&self, index: usize) -> Result<PatternVector> {
        PatternVector::one_hot(self.k(), index)
    }
}

impl TryFrom<Vec<String>> for PatternRegistry {
    type Error = Error;
    fn try_from(names: Vec<String>) -> Result<Self> {
        PatternRegistry::new(names)
    }
}

impl From<PatternRegistry> for Vec<String> {
    fn from(r: PatternRegistry) -> Self {
        r.names
    }
}

/// Expert criticality `h` over pattern vectors.
///
/// The deterministic form stores a per-class level (used for one-hot vectors
/// and as the fallback for unlisted multi-label combinations, which take the
/// maximum level over their set bits) plus explicit multi-label entries.
/// The stochastic form draws `H ~ Be(alpha, 1)` for critical patterns and
/// `H ~ Be(1, alpha)` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CriticalityModel {
    Deterministic {
        levels: Vec<f64>,
        #[serde(default)]
        combinations: Vec<CriticalityEntry>,
    },
    BetaStochastic {
        alpha: f64,
        critical: Vec<bool>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityEntry {
    pub bits: Vec<bool>,
    pub h: f64,
}

impl CriticalityModel {
    pub fn deterministic(levels: Vec<f64>) -> Result<Self> {
        let m = CriticalityModel::Deterministic {
            levels,
            combinations: Vec::new(),
        };
        m.validate()?;
        Ok(m)
    }

    /// Adds an explicit level for a multi-label combination.
    pub fn with_combination(self, bits: Vec<bool>, h: f64) -> Result<Self> {
        match self {
            CriticalityModel::Deterministic {
                levels,
                mut combinations,
            } => {
                combinations.retain(|e| e.bits != bits);
                combinations.push(CriticalityEntry { bits, h });
                let m = CriticalityModel::Deterministic {
                    levels,
                    combinations,
                };
                m.validate()?;
                Ok(m)
            }
            CriticalityModel::BetaStochastic { .. } => Err(Error::InvalidConfig(
                "combinations only apply to deterministic criticality".into(),
            )),
        }
    }

    pub fn beta(alpha: f64, critical: Vec<bool>) -> Result<Self> {
        let m = CriticalityModel::BetaStochastic { alpha, critical };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CriticalityModel::Deterministic {
                levels,
                combinations,
            } => {
                if levels.is_empty() {
                    return Err(Error::InvalidConfig("criticality needs K >= 1 levels".into()));
                }
                for &h in levels.iter().chain(combinations.iter().map(|e| &e.h)) {
                    if !(0.0..=1.0).contains(&h) {
                        return Err(Error::OutOfRange(format!("criticality level {h} outside [0,1]")));
                    }
                }
                if let Some(e) = combinations.iter().find(|e| e.bits.len() != levels.len()) {
                    return Err(Error::DimensionMismatch(format!(
                        "combination of length {} for K={}",
                        e.bits.len(),
                        levels.len()
                    )));
                }
                Ok(())
            }
            CriticalityModel::BetaStochastic { alpha, critical } => {
                if !(*alpha > 1.0) || !alpha.is_finite() {
                    return Err(Error::InvalidAlpha(*alpha));
                }
                if critical.is_empty() {
                    return Err(Error::InvalidConfig("criticality needs K >= 1 classes".into()));
                }
                Ok(())
            }
        }
    }

    pub fn k(&self) -> usize {
        match self {
            CriticalityModel::Deterministic { levels, .. } => levels.len(),
            CriticalityModel::BetaStochastic { critical, .. } => critical.len(),
        }
    }

    fn check_len(&self, p: &PatternVector) -> Result<()> {
        if p.k() != self.k() {
            return Err(Error::DimensionMismatch(format!(
                "pattern of length {} for criticality over K={}",
                p.k(),
                self.k()
            )));
        }
        Ok(())
    }

    fn beta_is_critical(critical: &[bool], p: &PatternVector) -> bool {
        p.bits().iter().zip(critical).any(|(&b, &c)| b && c)
    }

    /// Deterministic `h(p)`, or the Beta mean for the stochastic model.
    pub fn expected(&self, p: &PatternVector) -> Result<f64> {
        self.check_len(p)?;
        Ok(match self {
            CriticalityModel::Deterministic {
                levels,
                combinations,
            } => {
                if let Some(e) = combinations.iter().find(|e| e.bits == p.bits()) {
                    e.h
                } else {
                    p.bits()
                        .iter()
                        .zip(levels)
                        .filter(|(&b, _)| b)
                        .map(|(_, &h)| h)
                        .fold(0.0, f64::max)
                }
            }
            CriticalityModel::BetaStochastic { alpha, critical } => {
                if Self::beta_is_critical(critical, p) {
                    alpha / (alpha + 1.0)
                } else {
                    1.0 / (1.0 + alpha)
                }
            }
        })
    }

    /// `P(H > tau | p)`.
    pub fn tail(&self, p: &PatternVector, tau: f64) -> Result<f64> {
        let t = tau.clamp(0.0, 1.0);
        match self {
            CriticalityModel::Deterministic { .. } => {
                let h = self.expected(p)?;
                Ok(if h > tau { 1.0 } else { 0.0 })
            }
            CriticalityModel::BetaStochastic { alpha, critical } => {
                self.check_len(p)?;
                // Be(a,1): P(H > t) = 1 - t^a ; Be(1,a): P(H > t) = (1 - t)^a
                Ok(if Self::beta_is_critical(critical, p) {
                    1.0 - t.powf(*alpha)
                } else {
                    (1.0 - t).powf(*alpha)
                })
            }
        }
    }

    /// Draws one criticality value for pattern `p`.
    pub fn sample<R: Rng + ?Sized>(&self, p: &PatternVector, rng: &mut R) -> Result<f64> {
        match self {
            CriticalityModel::Deterministic { .. } => self.expected(p),
            CriticalityModel::BetaStochastic { alpha, critical } => {
                self.check_len(p)?;
                let u: f64 = rng.random();
                // inverse CDF of Be(a,1) is u^(1/a)
                let x = u.powf(1.0 / alpha);
                Ok(if Self::beta_is_critical(critical, p) { x } else { 1.0 - x })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntensityGrade {
    Weak,
    Mediocre,
    Strong,
}

impl IntensityGrade {
    pub const ALL: [IntensityGrade; 3] = [IntensityGrade::Weak, IntensityGrade::Mediocre, IntensityGrade::Strong];

    pub fn as_str(self) -> &'static str {
        match self {
            IntensityGrade::Weak => "weak",
            IntensityGrade::Mediocre => "mediocre",
            IntensityGrade::Strong => "strong",
        }
    }
}

/// A wafermap with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub wafermap: Wafermap,
    pub true_pattern: PatternVector,
    /// Ground-truth critical state.
    pub critical: bool,
    pub grade: Option<IntensityGrade>,
}

impl LabeledSample {
    /// Class index of a one-hot label.
    pub fn class_index(&self) -> Option<usize> {
        self.true_pattern.index()
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("{name} = {v} outside [0,1]")))
    }
}

/// State of nature: intensity, pattern and criticality.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessState {
    intensity: f64,
    pattern: PatternVector,
    criticality: f64,
}

impl ProcessState {
    pub fn new(intensity: f64, pattern: PatternVector, criticality: f64) -> Result<Self> {
        check_unit("intensity", intensity)?;
        check_unit("criticality", criticality)?;
        Ok(ProcessState {
            intensity,
            pattern,
            criticality,
        })
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn pattern(&self) -> &PatternVector {
        &self.pattern
    }

    pub fn criticality(&self) -> f64 {
        self.criticality
    }
}

/// Per-wafer scoring result with every intermediate value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthReport {
    intensity: f64,
    pattern_posterior: Vec<f64>,
    predicted_pattern: PatternVector,
    criticality: f64,
    hf: f64,
    decision: bool,
    threshold: f64,
}

impl HealthReport {
    /// Assembles a report; `intensity` and `criticality` are clamped to
    /// `[0, 1]`, and `hf` and the decision are derived from them.
    pub fn new(
        intensity: f64,
        pattern_posterior: Vec<f64>,
        predicted_pattern: PatternVector,
        criticality: f64,
        threshold: f64,
    ) -> Result<Self> {
        check_unit("threshold", threshold)?;
        if !intensity.is_finite() || !criticality.is_finite() {
            return Err(Error::OutOfRange("non-finite intensity or criticality".into()));
        }
        let total: f64 = pattern_posterior.iter().sum();
        if (total - 1.0).abs() > 1e-9 || pattern_posterior.iter().any(|&p| p < 0.0) {
            return Err(Error::OutOfRange(format!("posterior sums to {total}")));
        }
        let intensity = intensity.clamp(0.0, 1.0);
        let criticality = criticality.clamp(0.0, 1.0);
        let hf = intensity * criticality;
        Ok(HealthReport {
            intensity,
            pattern_posterior,
            predicted_pattern,
            criticality,
            hf,
            decision: hf > threshold,
            threshold,
        })
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn pattern_posterior(&self) -> &[f64] {
        &self.pattern_posterior
    }

    pub fn predicted_pattern(&self) -> &PatternVector {
        &self.predicted_pattern
    }

    pub fn criticality(&self) -> f64 {
        self.criticality
    }

    pub fn hf(&self) -> f64 {
        self.hf
    }

    pub fn decision(&self) -> bool {
        self.decision
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

/// Outcome of an empirical consistency check of a trained component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub beta: f64,
    pub xi: f64,
    pub empirical_exceedance_rate: f64,
    pub passed: bool,
}

impl ConsistencyReport {
    pub fn new(beta: f64, xi: f64, empirical_exceedance_rate: f64) -> Self {
        ConsistencyReport {
            beta,
            xi,
            empirical_exceedance_rate,
            passed: empirical_exceedance_rate <= xi,
        }
    }
}

/// Threshold-indexed error-rate bounds with the component curves behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    taus: Vec<f64>,
    fpr_bound: Vec<f64>,
    fnr_bound: Vec<f64>,
    fpr_i_curve: Vec<f64>,
    fpr_h_curve: Vec<f64>,
}

impl BoundReport {
    pub(crate) fn from_parts(taus: Vec<f64>, fpr_i_curve: Vec<f64>, fpr_h_curve: Vec<f64>) -> Self {
        let fpr_bound = taus
            .iter()
            .zip(fpr_i_curve.iter().zip(&fpr_h_curve))
            .map(|(&t, (&fi, &fh))| (1.0 - t) * fi * fh)
            .collect();
        let fnr_bound = taus.clone();
        BoundReport {
            taus,
            fpr_bound,
            fnr_bound,
            fpr_i_curve,
            fpr_h_curve,
        }
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn fpr_bound(&self) -> &[f64] {
        &self.fpr_bound
    }

    pub fn fnr_bound(&self) -> &[f64] {
        &self.fnr_bound
    }

    pub fn fpr_i_curve(&self) -> &[f64] {
        &self.fpr_i_curve
    }

    pub fn fpr_h_curve(&self) -> &[f64] {
        &self.fpr_h_curve
    }
}
