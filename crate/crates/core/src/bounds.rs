//! Error-rate bounds for the thresholded health factor: the product bound on
//! the false-positive rate, the criticality-FPR decomposition over critical
//! and uncritical patterns, and Monte Carlo machinery to check both.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Beta;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::classify::ConfusionMatrix;
use crate::error::{Error, Result};
use crate::model::{BoundReport, CriticalityModel, PatternVector};
use crate::rng::{stream, StreamRng};
use crate::stats::isotonic_nonincreasing;

/// Minimum Monte Carlo sample size accepted by the estimators.
pub const MIN_MC_SAMPLES: usize = 10_000;
const CHUNK: usize = 4096;
const MASS_TOL: f64 = 1e-9;

/// Distribution of the intensity component on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum IntensityDist {
    PointMass { value: f64 },
    Uniform,
    Beta { a: f64, b: f64 },
}

impl IntensityDist {
    pub fn validate(&self) -> Result<()> {
        match *self {
            IntensityDist::PointMass { value } if !(0.0..=1.0).contains(&value) => {
                Err(Error::OutOfRange(format!("point mass {value} outside [0,1]")))
            }
            IntensityDist::Beta { a, b } if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) => {
                Err(Error::InvalidConfig(format!("beta shapes must be positive, got ({a}, {b})")))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            IntensityDist::PointMass { value } => value,
            IntensityDist::Uniform => rng.random(),
            IntensityDist::Beta { a, b } => Beta::new(a, b).expect("validated shapes").sample(rng),
        }
    }

    /// `P(i > tau)`.
    pub fn tail(&self, tau: f64) -> f64 {
        let t = tau.clamp(0.0, 1.0);
        match *self {
            IntensityDist::PointMass { value } => f64::from(u8::from(value > tau)),
            IntensityDist::Uniform => 1.0 - t,
            IntensityDist::Beta { a, b } => 1.0 - beta_reg(a, b, t),
        }
    }
}

/// Predicted one-hot pattern distribution given the ground-truth state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSampler {
    /// `P(p = e_j | c = 0)`.
    pub given_uncritical: Vec<f64>,
    /// `P(p = e_j | c = 1)`.
    pub given_critical: Vec<f64>,
}

fn check_mass(p: &[f64]) -> Result<()> {
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::UnnormalizedSampler(p.iter().sum()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::UnnormalizedSampler(total));
    }
    Ok(())
}

impl PatternSampler {
    pub fn new(given_uncritical: Vec<f64>, given_critical: Vec<f64>) -> Result<Self> {
        if given_uncritical.len() != given_critical.len() || given_uncritical.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "pattern distributions of length {} and {}",
                given_uncritical.len(),
                given_critical.len()
            )));
        }
        check_mass(&given_uncritical)?;
        check_mass(&given_critical)?;
        Ok(PatternSampler {
            given_uncritical,
            given_critical,
        })
    }

    /// Mixes the confusion rows of the true classes in each state, weighted by
    /// their row counts. A state with no observed class falls back to the
    /// uniform mixture of its rows (or of all rows if it has none).
    pub fn from_confusion(confusion: &ConfusionMatrix, critical_truth: &[bool]) -> Result<Self> {
        let k = confusion.k();
        if critical_truth.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{} criticality flags for a {k}-class confusion matrix",
                critical_truth.len()
            )));
        }
        let cond = confusion.conditional();
        let mix = |want: bool| -> Result<Vec<f64>> {
            let rows: Vec<usize> = (0..k).filter(|&t| critical_truth[t] == want && confusion.row_sum(t) > 0).collect();
            if rows.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "no observed {} class in the confusion matrix",
                    if want { "critical" } else { "uncritical" }
                )));
            }
            let total: u64 = rows.iter().map(|&t| confusion.row_sum(t)).sum();
            let mut p = vec![0.0; k];
            for &t in &rows {
                let w = confusion.row_sum(t) as f64 / total as f64;
                for j in 0..k {
                    p[j] += w * cond[t][j];
                }
            }
            Ok(p)
        };
        PatternSampler::new(mix(false)?, mix(true)?)
    }

    pub fn k(&self) -> usize {
        self.given_uncritical.len()
    }

    pub fn given(&self, critical: bool) -> &[f64] {
        if critical {
            &self.given_critical
        } else {
            &self.given_uncritical
        }
    }
}

/// Independent intensity and criticality components, each conditioned on the
/// ground-truth state `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDistributions {
    pub intensity_uncritical: IntensityDist,
    pub intensity_critical: IntensityDist,
    pub patterns: PatternSampler,
    pub criticality: CriticalityModel,
}

impl ComponentDistributions {
    pub fn validate(&self) -> Result<()> {
        self.intensity_uncritical.validate()?;
        self.intensity_critical.validate()?;
        self.criticality.validate()?;
        check_mass(&self.patterns.given_uncritical)?;
        check_mass(&self.patterns.given_critical)?;
        if self.patterns.k() != self.criticality.k() {
            return Err(Error::DimensionMismatch(format!(
                "pattern sampler over {} classes, criticality over {}",
                self.patterns.k(),
                self.criticality.k()
            )));
        }
        Ok(())
    }

    fn intensity(&self, critical: bool) -> &IntensityDist {
        if critical {
            &self.intensity_critical
        } else {
            &self.intensity_uncritical
        }
    }

    /// Exact `P(H > tau | c)`.
    pub fn criticality_tail(&self, critical: bool, tau: f64) -> Result<f64> {
        let probs = self.patterns.given(critical);
        let mut total = 0.0;
        for (j, &pj) in probs.iter().enumerate() {
            total += pj * self.criticality.tail(&PatternVector::one_hot(probs.len(), j)?, tau)?;
        }
        Ok(total)
    }
}

/// Draws `(i, H)` pairs conditional on `c`.
struct ConditionalSampler<'a> {
    intensity: &'a IntensityDist,
    patterns: WeightedIndex<f64>,
    one_hots: Vec<PatternVector>,
    criticality: &'a CriticalityModel,
}

impl<'a> ConditionalSampler<'a> {
    fn new(d: &'a ComponentDistributions, critical: bool) -> Result<Self> {
        let probs = d.patterns.given(critical);
        let patterns = WeightedIndex::new(probs).map_err(|_| Error::UnnormalizedSampler(probs.iter().sum()))?;
        let one_hots = (0..probs.len())
            .map(|j| PatternVector::one_hot(probs.len(), j))
            .collect::<Result<_>>()?;
        Ok(ConditionalSampler {
            intensity: d.intensity(critical),
            patterns,
            one_hots,
            criticality: &d.criticality,
        })
    }

    fn draw(&self, rng: &mut StreamRng) -> Result<(f64, f64)> {
        let i = self.intensity.sample(rng);
        let j = self.patterns.sample(rng);
        let h = self.criticality.sample(&self.one_hots[j], rng)?;
        Ok((i, h))
    }
}

fn check_taus(taus: &[f64]) -> Result<()> {
    if taus.is_empty() {
        return Err(Error::EmptyTauGrid);
    }
    for (k, &t) in taus.iter().enumerate() {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::OutOfRange(format!("tau {t} outside [0,1]")));
        }
        if k > 0 && t <= taus[k - 1] {
            return Err(Error::InvalidConfig("tau grid must be strictly increasing".into()));
        }
    }
    Ok(())
}

fn check_samples(n: usize) -> Result<()> {
    if n < MIN_MC_SAMPLES {
        return Err(Error::InvalidConfig(format!(
            "monte carlo needs at least {MIN_MC_SAMPLES} samples, got {n}"
        )));
    }
    Ok(())
}

/// Per-threshold exceedance counts over `n` draws, computed in fixed-size
/// chunks with one derived stream each so the sum does not depend on thread
/// scheduling. `count(i, h)` returns the per-tau increments.
fn chunked_counts<F>(n: usize, seed: u64, label: &str, n_out: usize, draw: F) -> Result<Vec<u64>>
where
    F: Fn(&mut StreamRng, &mut [u64]) -> Result<()> + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let partial: Vec<Vec<u64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, label, c as u64);
            let mut acc = vec![0u64; n_out];
            let len = CHUNK.min(n - c * CHUNK);
            for _ in 0..len {
                draw(&mut rng, &mut acc)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0u64; n_out];
    for p in partial {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    Ok(total)
}

/// Monte Carlo `P(i > tau | c=0)` and `P(H > tau | c=0)` over the grid, each
/// made non-increasing by an isotonic pass.
pub fn estimate_component_fpr_curves(
    dists: &ComponentDistributions,
    taus: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    dists.validate()?;
    check_taus(taus)?;
    check_samples(n_samples)?;
    let sampler = ConditionalSampler::new(dists, false)?;
    let m = taus.len();
    let counts = chunked_counts(n_samples, seed, "bounds/components", 2 * m, |rng, acc| {
        // independent draws for the two marginals
        let i = sampler.intensity.sample(rng);
        let (_, h) = sampler.draw(rng)?;
        for (k, &t) in taus.iter().enumerate() {
            acc[k] += u64::from(i > t);
            acc[m + k] += u64::from(h > t);
        }
        Ok(())
    })?;
    let n = n_samples as f64;
    let fi: Vec<f64> = counts[..m].iter().map(|&c| c as f64 / n).collect();
    let fh: Vec<f64> = counts[m..].iter().map(|&c| c as f64 / n).collect();
    Ok((isotonic_nonincreasing(&fi), isotonic_nonincreasing(&fh)))
}

fn check_curve(name: &str, curve: &[f64], len: usize) -> Result<()> {
    if curve.len() != len {
        return Err(Error::DimensionMismatch(format!("{name} has {} points for {len} taus", curve.len())));
    }
    for (k, &v) in curve.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange(format!("{name}[{k}] = {v} outside [0,1]")));
        }
        if k > 0 && v > curve[k - 1] {
            return Err(Error::NonMonotoneCurve {
                curve: name.to_string(),
                index: k,
            });
        }
    }
    Ok(())
}

/// `fpr_bound = (1 - tau) * FPR_i * FPR_H` and `fnr_bound = tau` per grid point.
pub fn theorem1_bounds(fpr_i_curve: &[f64], fpr_h_curve: &[f64], taus: &[f64]) -> Result<BoundReport> {
    check_taus(taus)?;
    check_curve("fpr_i", fpr_i_curve, taus.len())?;
    check_curve("fpr_h", fpr_h_curve, taus.len())?;
    Ok(BoundReport::from_parts(taus.to_vec(), fpr_i_curve.to_vec(), fpr_h_curve.to_vec()))
}

/// Empirical error rates of the thresholded product next to the stated
/// bounds. `fpr_product_bound = FPR_i * FPR_H` is the weaker bound implied
/// by `i*H > tau => i > tau and H > tau`; it is reported for comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Check {
    pub taus: Vec<f64>,
    pub n_samples: usize,
    pub fpr: Vec<f64>,
    pub fpr_se: Vec<f64>,
    pub fnr: Vec<f64>,
    pub fnr_se: Vec<f64>,
    pub fpr_bound: Vec<f64>,
    pub fnr_bound: Vec<f64>,
    pub fpr_product_bound: Vec<f64>,
    pub fpr_i: Vec<f64>,
    pub fpr_h: Vec<f64>,
}

impl Theorem1Check {
    /// Grid indices where the empirical FPR exceeds its bound by more than
    /// three standard errors.
    pub fn fpr_violations(&self) -> Vec<usize> {
        (0..self.taus.len())
            .filter(|&k| self.fpr[k] > self.fpr_bound[k] + 3.0 * self.fpr_se[k])
            .collect()
    }

    pub fn fnr_violations(&self) -> Vec<usize> {
        (0..self.taus.len())
            .filter(|&k| self.fnr[k] > self.fnr_bound[k] + 3.0 * self.fnr_se[k])
            .collect()
    }

    pub fn product_bound_violations(&self) -> Vec<usize> {
        (0..self.taus.len())
            .filter(|&k| self.fpr[k] > self.fpr_product_bound[k] + 3.0 * self.fpr_se[k])
            .collect()
    }
}

fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Samples `n_samples` states from each of `c = 0` and `c = 1` and measures
/// the FPR and FNR of `1[i*H > tau]` next to the bounds built from
/// independently estimated component curves.
pub fn measure_theorem1(dists: &ComponentDistributions, taus: &[f64], n_samples: usize, seed: u64) -> Result<Theorem1Check> {
    dists.validate()?;
    check_taus(taus)?;
    check_samples(n_samples)?;
    let (fpr_i, fpr_h) = estimate_component_fpr_curves(dists, taus, n_samples, seed)?;
    let report = theorem1_bounds(&fpr_i, &fpr_h, taus)?;
    let m = taus.len();
    let mut rates = Vec::with_capacity(2);
    for critical in [false, true] {
        let sampler = ConditionalSampler::new(dists, critical)?;
        let label = if critical { "bounds/joint/critical" } else { "bounds/joint/uncritical" };
        let counts = chunked_counts(n_samples, seed, label, m, |rng, acc| {
            let (i, h) = sampler.draw(rng)?;
            let hf = i * h;
            for (k, &t) in taus.iter().enumerate() {
                // alarms for c=0, misses for c=1
                acc[k] += u64::from((hf > t) != critical);
            }
            Ok(())
        })?;
        rates.push(counts.iter().map(|&c| c as f64 / n_samples as f64).collect::<Vec<f64>>());
    }
    let fnr = rates.pop().unwrap();
    let fpr = rates.pop().unwrap();
    Ok(Theorem1Check {
        taus: taus.to_vec(),
        n_samples,
        fpr_se: fpr.iter().map(|&p| binomial_se(p, n_samples)).collect(),
        fnr_se: fnr.iter().map(|&p| binomial_se(p, n_samples)).collect(),
        fpr,
        fnr,
        fpr_bound: report.fpr_bound().to_vec(),
        fnr_bound: report.fnr_bound().to_vec(),
        fpr_product_bound: fpr_i.iter().zip(&fpr_h).map(|(a, b)| a * b).collect(),
        fpr_i,
        fpr_h,
    })
}

/// As [`measure_theorem1`], failing with `bound-violation` at the first grid
/// point where either stated bound is exceeded by more than 3 standard errors.
pub fn verify_theorem1(dists: &ComponentDistributions, taus: &[f64], n_samples: usize, seed: u64) -> Result<Theorem1Check> {
    let check = measure_theorem1(dists, taus, n_samples, seed)?;
    if let Some(&k) = check.fpr_violations().first() {
        return Err(Error::BoundViolation {
            tau: check.taus[k],
            detail: format!(
                "empirical FPR {:.6} > bound {:.6} + 3*{:.2e}",
                check.fpr[k], check.fpr_bound[k], check.fpr_se[k]
            ),
        });
    }
    if let Some(&k) = check.fnr_violations().first() {
        return Err(Error::BoundViolation {
            tau: check.taus[k],
            detail: format!(
                "empirical FNR {:.6} > tau + 3*{:.2e}",
                check.fnr[k], check.fnr_se[k]
            ),
        });
    }
    Ok(check)
}

/// `P(H > tau | c=0)` split into the mass carried by patterns whose
/// criticality exceeds `tau` (recognition errors) and the rest (expert
/// errors).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub term_critical: f64,
    pub term_uncritical: f64,
    pub total: f64,
}

/// Splits `sum_p P(H > tau | p) P(p | c=0)` over `P_c = {p : h(p) > tau}` and
/// its complement. For the stochastic model `h(p)` is the Beta mean.
pub fn theorem2_decompose(patterns: &[(PatternVector, f64)], criticality: &CriticalityModel, tau: f64) -> Result<Decomposition> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::OutOfRange(format!("tau {tau} outside [0,1]")));
    }
    let probs: Vec<f64> = patterns.iter().map(|(_, q)| *q).collect();
    check_mass(&probs)?;
    let (mut crit, mut uncrit) = (0.0, 0.0);
    for (p, q) in patterns {
        let term = criticality.tail(p, tau)? * q;
        if criticality.expected(p)? > tau {
            crit += term;
        } else {
            uncrit += term;
        }
    }
    Ok(Decomposition {
        term_critical: crit,
        term_uncritical: uncrit,
        total: crit + uncrit,
    })
}

/// One row of the Beta-criticality sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSweepRow {
    pub alpha: f64,
    pub tau: f64,
    pub fpr_bound: f64,
    pub fnr_bound: f64,
    pub fpr_i: f64,
    pub fpr_h: f64,
}

/// Product bounds over `(alpha, tau)` with deterministic intensity 1 and
/// `H ~ Be(alpha, 1)` / `Be(1, alpha)` for predicted critical / uncritical
/// patterns, the pattern distribution coming from `confusion` and the
/// ground-truth flags `critical`.
pub fn beta_criticality_sweep(
    confusion: &ConfusionMatrix,
    critical: &[bool],
    alphas: &[f64],
    taus: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<BetaSweepRow>> {
    for &a in alphas {
        if !(a > 1.0) || !a.is_finite() {
            return Err(Error::InvalidAlpha(a));
        }
    }
    check_taus(taus)?;
    check_samples(n_samples)?;
    let patterns = PatternSampler::from_confusion(confusion, critical)?;
    let mut rows = Vec::with_capacity(alphas.len() * taus.len());
    for (ai, &alpha) in alphas.iter().enumerate() {
        let dists = ComponentDistributions {
            intensity_uncritical: IntensityDist::PointMass { value: 1.0 },
            intensity_critical: IntensityDist::PointMass { value: 1.0 },
            patterns: patterns.clone(),
            criticality: CriticalityModel::beta(alpha, critical.to_vec())?,
        };
        let sub_seed = crate::rng::derive_seed(seed, "bounds/beta-sweep", ai as u64);
        let (fi, fh) = estimate_component_fpr_curves(&dists, taus, n_samples, sub_seed)?;
        let report = theorem1_bounds(&fi, &fh, taus)?;
        for k in 0..taus.len() {
            rows.push(BetaSweepRow {
                alpha,
                tau: taus[k],
                fpr_bound: report.fpr_bound()[k],
                fnr_bound: report.fnr_bound()[k],
                fpr_i: fi[k],
                fpr_h: fh[k],
            });
        }
    }
    Ok(rows)
}

/// Parses `A:B:STEP` into an inclusive grid, snapping each point to the
/// nearest multiple of `STEP` from `A` so decimal steps do not drift.
pub fn parse_tau_range(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{s}` in tau range")));
    match parts.as_slice() {
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if !(step > 0.0) || b < a {
                return Err(Error::Parse(format!("tau range `{spec}` needs A <= B and STEP > 0")));
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            let grid: Vec<f64> = (0..=n).map(|k| round12(a + k as f64 * step)).collect();
            check_taus(&grid)?;
            Ok(grid)
        }
        _ => {
            let grid = spec.split(',').map(num).collect::<Result<Vec<f64>>>()?;
            check_taus(&grid)?;
            Ok(grid)
        }
    }
}

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}
