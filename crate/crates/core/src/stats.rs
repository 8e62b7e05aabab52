//! Descriptive statistics, isotonic correction, one-way ANOVA and Tukey HSD.
//!
//! The studentized range distribution has no closed form; its upper tail is
//! evaluated by nested adaptive Gauss-Kronrod quadrature. The inner integrand
//! is written as a sum of non-negative terms so small tail probabilities are
//! not lost to cancellation.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Linear-interpolation quantile of already sorted data (Hyndman-Fan type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn quantile(xs: &[f64], q: f64) -> f64 {
    quantile_sorted(&sorted_copy(xs), q)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Least-squares projection onto non-increasing sequences (pool adjacent
/// violators).
pub fn isotonic_nonincreasing(ys: &[f64]) -> Vec<f64> {
    // blocks of (sum, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(ys.len());
    for &y in ys {
        blocks.push((y, 1));
        while blocks.len() >= 2 {
            let (s1, c1) = blocks[blocks.len() - 2];
            let (s2, c2) = blocks[blocks.len() - 1];
            if s1 / c1 as f64 >= s2 / c2 as f64 {
                break;
            }
            blocks.pop();
            let last = blocks.len() - 1;
            blocks[last] = (s1 + s2, c1 + c2);
        }
    }
    let mut out = Vec::with_capacity(ys.len());
    for (s, c) in blocks {
        let v = s / c as f64;
        out.extend(std::iter::repeat_n(v, c));
    }
    out
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail of the F distribution, `P(F(d1, d2) > f)`.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    if f.is_nan() {
        return f64::NAN;
    }
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    beta_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))
}

/// Two-sided p-value of Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

/// Pooled-variance two-sample t statistic.
pub fn pooled_t_statistic(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let ssa: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let ssb: f64 = b.iter().map(|x| (x - mb).powi(2)).sum();
    let sp2 = (ssa + ssb) / (na + nb - 2.0);
    (ma - mb) / (sp2 * (1.0 / na + 1.0 / nb)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub p: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub ss_between: f64,
    pub ss_within: f64,
}

impl AnovaResult {
    pub fn mse(&self) -> f64 {
        self.ss_within / self.df_within as f64
    }
}

/// One-way analysis of variance over `groups`.
///
/// When every value is identical the between-group variation is zero and the
/// result is `F = 0, p = 1`.
pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<AnovaResult> {
    if groups.len() < 2 {
        return Err(Error::DegenerateGroups(format!("need >= 2 groups, got {}", groups.len())));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(Error::DegenerateGroups(format!("group of size {}", g.len())));
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    let k = groups.len();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let m = mean(g);
        ss_between += g.len() as f64 * (m - grand).powi(2);
        ss_within += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    let df_between = k - 1;
    let df_within = n - k;
    let (f, p) = if ss_between == 0.0 {
        (0.0, 1.0)
    } else if ss_within == 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = (ss_between / df_between as f64) / (ss_within / df_within as f64);
        (f, f_sf(f, df_between as f64, df_within as f64))
    };
    Ok(AnovaResult {
        f,
        p,
        df_between,
        df_within,
        ss_between,
        ss_within,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyComparison {
    pub group_a: usize,
    pub group_b: usize,
    pub mean_diff: f64,
    pub q: f64,
    pub p: f64,
}

/// Tukey-Kramer honest-significance comparisons for every pair of groups.
pub fn tukey_hsd(groups: &[Vec<f64>]) -> Result<Vec<TukeyComparison>> {
    let anova = one_way_anova(groups)?;
    let k = groups.len();
    let df = anova.df_within as f64;
    let mse = anova.mse();
    let means: Vec<f64> = groups.iter().map(|g| mean(g)).collect();
    let mut out = Vec::with_capacity(k * (k - 1) / 2);
    for a in 0..k {
        for b in (a + 1)..k {
            let diff = means[b] - means[a];
            let se = (mse / 2.0 * (1.0 / groups[a].len() as f64 + 1.0 / groups[b].len() as f64)).sqrt();
            let (q, p) = if diff == 0.0 {
                (0.0, 1.0)
            } else if se == 0.0 {
                (f64::INFINITY, 0.0)
            } else {
                let q = diff.abs() / se;
                (q, ptukey_upper(q, k, df))
            };
            out.push(TukeyComparison {
                group_a: a,
                group_b: b,
                mean_diff: diff,
                q,
                p,
            });
        }
    }
    Ok(out)
}

const QUAD_TOL: f64 = 1e-8;

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    const XGK: [f64; 8] = [
        0.991_455_371_120_812_6,
        0.949_107_912_342_758_5,
        0.864_864_423_359_769_1,
        0.741_531_185_599_394_4,
        0.586_087_235_467_691_1,
        0.405_845_151_377_397_2,
        0.207_784_955_007_898_5,
        0.0,
    ];
    const WGK: [f64; 8] = [
        0.022_935_322_010_529_22,
        0.063_092_092_629_978_55,
        0.104_790_010_322_250_2,
        0.140_653_259_715_525_9,
        0.169_004_726_639_267_9,
        0.190_350_578_064_785_4,
        0.204_432_940_075_298_9,
        0.209_482_141_084_727_8,
    ];
    const WG: [f64; 4] = [
        0.129_484_966_168_869_7,
        0.279_705_391_489_276_7,
        0.381_830_050_505_118_9,
        0.417_959_183_673_469_4,
    ];
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        kron += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (val, err) = gk15(f, a, b);
    if err <= tol.max(QUAD_TOL * 1e-6 * val.abs()) || depth == 0 {
        return val;
    }
    let m = 0.5 * (a + b);
    adaptive(f, a, m, tol / 2.0, depth - 1) + adaptive(f, m, b, tol / 2.0, depth - 1)
}

/// Integrates `f` over `[a, b]` split into `panels` equal pieces, each refined
/// adaptively to an absolute tolerance of `tol / panels`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, tol: f64) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + h * i as f64;
            adaptive(&f, lo, lo + h, tol / panels as f64, 30)
        })
        .sum()
}

/// `P(range of k iid standard normals > w)`.
pub fn normal_range_upper(w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 1.0;
    }
    let km2 = k as i32 - 2;
    let integrand = |z: f64| {
        let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let upper = norm_cdf(z);
        let lower = norm_cdf(z - w);
        let band = upper - lower;
        // a^(k-1) - b^(k-1) = (a - b) * sum_i a^i b^(k-2-i) with a = upper, b = band
        let mut sum = 0.0;
        for i in 0..=km2 {
            sum += upper.powi(i) * band.powi(km2 - i);
        }
        phi * lower * sum
    };
    let r = k as f64 * integrate(integrand, -9.0, 9.0 + w, 16, 1e-13);
    r.clamp(0.0, 1.0)
}

/// Upper tail of the studentized range distribution, `P(Q(k, df) > q)`.
pub fn ptukey_upper(q: f64, k: usize, df: f64) -> f64 {
    if q <= 0.0 {
        return 1.0;
    }
    if !q.is_finite() {
        return 0.0;
    }
    if df.is_infinite() || df > 1e5 {
        return normal_range_upper(q, k);
    }
    // density of s = sqrt(chi2_df / df)
    let log_norm = std::f64::consts::LN_2 + (df / 2.0) * (df / 2.0).ln() - ln_gamma(df / 2.0);
    let dens = |s: f64| {
        if s <= 0.0 {
            0.0
        } else {
            (log_norm + (df - 1.0) * s.ln() - df * s * s / 2.0).exp()
        }
    };
    let s_hi = 1.0 + 14.0 / df.sqrt();
    let v = integrate(|s| dens(s) * normal_range_upper(q * s, k), 0.0, s_hi, 32, QUAD_TOL);
    v.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_type7() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&xs, 0.5), 2.5);
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
        assert!((quantile(&xs, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn isotonic_pools_violators() {
        assert_eq!(isotonic_nonincreasing(&[1.0, 0.5, 0.7, 0.2]), vec![1.0, 0.6, 0.6, 0.2]);
        assert_eq!(isotonic_nonincreasing(&[0.0, 1.0]), vec![0.5, 0.5]);
        let mono = [0.9, 0.9, 0.3, 0.0];
        assert_eq!(isotonic_nonincreasing(&mono), mono.to_vec());
    }

    #[test]
    fn anova_identical_groups() {
        let r = one_way_anova(&[vec![2.0; 5], vec![2.0; 4], vec![2.0; 3]]).unwrap();
        assert_eq!((r.f, r.p), (0.0, 1.0));
    }

    #[test]
    fn anova_degenerate_inputs() {
        assert_eq!(one_way_anova(&[vec![1.0, 2.0]]).unwrap_err().name(), "degenerate-groups");
        assert!(one_way_anova(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn anova_textbook_example() {
        // hand-computed: means 2, 5, 8; grand 5; SSB = 3*(9+0+9) = 54; SSW = 2+2+2 = 6
        let r = one_way_anova(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]]).unwrap();
        assert!((r.ss_between - 54.0).abs() < 1e-12);
        assert!((r.ss_within - 6.0).abs() < 1e-12);
        assert!((r.f - 27.0).abs() < 1e-12);
        // F(2, 6) upper tail at 27 = (1 + 27/3)^-3 = 0.001
        assert!((r.p - 0.001).abs() < 1e-12, "{}", r.p);
    }

    #[test]
    fn f_tail_two_df_numerator_closed_form() {
        // P(F(2, d) > f) = (1 + 2f/d)^(-d/2)
        for &(f, d) in &[(0.5f64, 10.0f64), (3.0, 7.0), (12.0, 40.0)] {
            let want = (1.0 + 2.0 * f / d).powf(-d / 2.0);
            assert!((f_sf(f, 2.0, d) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn range_of_two_normals_is_scaled_half_normal() {
        for &w in &[0.1, 1.0, 2.5, 5.0] {
            let want = erfc(w / 2.0);
            assert!((normal_range_upper(w, 2) - want).abs() < 1e-10, "w={w}");
        }
    }

    #[test]
    fn studentized_range_with_two_groups_matches_t() {
        // Q(2, df) = sqrt(2) |t_df|
        for &(q, df) in &[(1.0, 5.0), (3.0, 12.0), (4.5, 30.0), (2.0, 167.0)] {
            let want = t_two_sided_p(q / std::f64::consts::SQRT_2, df);
            let got = ptukey_upper(q, 2, df);
            assert!((got - want).abs() < 1e-7, "q={q} df={df}: {got} vs {want}");
        }
    }

    #[test]
    fn studentized_range_table_values() {
        // tabulated 5% critical values of the studentized range
        for &(q, k, df) in &[(3.877, 3, 10.0), (3.314, 3, f64::INFINITY), (3.958, 4, 20.0), (4.232, 5, 20.0), (3.399, 3, 60.0)] {
            let p = ptukey_upper(q, k, df);
            assert!((p - 0.05).abs() < 5e-4, "k={k} df={df}: p={p}");
        }
    }

    #[test]
    fn tukey_on_separated_groups() {
        let g = vec![
            vec![0.0, 0.1, -0.1, 0.05, -0.05],
            vec![0.0, 0.1, -0.1, 0.05, -0.05],
            vec![5.0, 5.1, 4.9, 5.05, 4.95],
        ];
        let t = tukey_hsd(&g).unwrap();
        assert_eq!(t.len(), 3);
        assert!(t[0].p > 0.99);
        assert!(t[1].p < 1e-8 && t[2].p < 1e-8);
    }
}
