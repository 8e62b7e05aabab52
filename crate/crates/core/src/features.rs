//! Denoising and texture features: quadratic MRF smoothing, LBP, rotation
//! invariant LBP and HOG, concatenated into one fixed-length vector.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Wafermap;

const ROOK: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

/// Clockwise from the top-left; neighbour `i` sets bit `i`.
const RING: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0)];

pub const LBP_BINS: usize = 256;
pub const RLBP_BINS: usize = 36;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrfConfig {
    pub lambda: f64,
    pub iters: usize,
}

impl Default for MrfConfig {
    fn default() -> Self {
        MrfConfig { lambda: 1.0, iters: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// `None` skips denoising.
    pub mrf: Option<MrfConfig>,
    /// Cell lattice `(cx, cy)`.
    pub hog_cells: (usize, usize),
    pub hog_bins: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            mrf: Some(MrfConfig::default()),
            hog_cells: (8, 8),
            hog_bins: 9,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(m) = &self.mrf {
            if !(m.lambda >= 0.0 && m.lambda.is_finite()) || m.iters == 0 {
                return Err(Error::InvalidConfig(format!(
                    "mrf needs lambda >= 0 and iters >= 1, got {} / {}",
                    m.lambda, m.iters
                )));
            }
        }
        if self.hog_cells.0 == 0 || self.hog_cells.1 == 0 || self.hog_bins == 0 {
            return Err(Error::InvalidConfig("hog cells and bins must be positive".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        LBP_BINS + RLBP_BINS + self.hog_cells.0 * self.hog_cells.1 * self.hog_bins
    }

    pub fn schema(&self) -> Vec<SchemaBlock> {
        let hog = self.hog_cells.0 * self.hog_cells.1 * self.hog_bins;
        vec![
            SchemaBlock { name: "lbp".into(), offset: 0, length: LBP_BINS },
            SchemaBlock { name: "rlbp".into(), offset: LBP_BINS, length: RLBP_BINS },
            SchemaBlock { name: "hog".into(), offset: LBP_BINS + RLBP_BINS, length: hog },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaBlock {
    pub name: String,
    pub offset: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema: Vec<SchemaBlock>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.schema
            .iter()
            .find(|b| b.name == name)
            .map(|b| &self.values[b.offset..b.offset + b.length])
    }
}

fn rook_neighbours(w: &Wafermap, x: usize, y: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    ROOK.iter().filter_map(move |&(dx, dy)| {
        let (nx, ny) = (x as isize + dx, y as isize + dy);
        w.is_in(nx, ny).then_some((nx as usize, ny as usize))
    })
}

/// `sum (y_c - x_c)^2 + lambda * sum_{adjacent pairs} (y_c - y_d)^2`, each
/// unordered rook pair counted once.
pub fn mrf_energy(observed: &Wafermap, smoothed: &Wafermap, lambda: f64) -> f64 {
    let mut data = 0.0;
    let mut smooth = 0.0;
    for y in 0..observed.height() {
        for x in 0..observed.width() {
            if !observed.is_in(x as isize, y as isize) {
                continue;
            }
            let v = smoothed.value(x, y);
            data += (v - observed.value(x, y)).powi(2);
            for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                if observed.is_in(nx as isize, ny as isize) {
                    smooth += (v - smoothed.value(nx, ny)).powi(2);
                }
            }
        }
    }
    data + lambda * smooth
}

/// Iterated conditional modes on the quadratic energy above. Each visit sets
/// the cell to its exact conditional minimiser, so the energy never rises.
pub fn mrf_denoise(w: &Wafermap, lambda: f64, iters: usize) -> Result<Wafermap> {
    mrf_denoise_trace(w, lambda, iters).map(|(out, _)| out)
}

/// As [`mrf_denoise`], also returning the energy after every sweep.
pub fn mrf_denoise_trace(w: &Wafermap, lambda: f64, iters: usize) -> Result<(Wafermap, Vec<f64>)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("mrf lambda must be >= 0, got {lambda}")));
    }
    if iters == 0 {
        return Err(Error::InvalidConfig("mrf iters must be >= 1".into()));
    }
    w.validate()?;
    let mut out = w.clone();
    let mut energies = Vec::with_capacity(iters);
    let mut y_vals = w.values().to_vec();
    for _ in 0..iters {
        for y in 0..w.height() {
            for x in 0..w.width() {
                if !w.is_in(x as isize, y as isize) {
                    continue;
                }
                let (mut sum, mut cnt) = (0.0, 0usize);
                for (nx, ny) in rook_neighbours(w, x, y) {
                    sum += y_vals[w.index(nx, ny)];
                    cnt += 1;
                }
                let i = w.index(x, y);
                y_vals[i] = (w.value(x, y) + lambda * sum) / (1.0 + lambda * cnt as f64);
            }
        }
        out = w.with_values(y_vals.clone())?;
        energies.push(mrf_energy(w, &out, lambda));
    }
    Ok((out, energies))
}

/// 8-bit LBP code of the masked-in cell `(x, y)`, or `None` for an
/// out-of-mask centre or one with no masked-in neighbour. Bits are set where
/// the neighbour is `>=` the centre; out-of-mask neighbours count as equal.
pub fn lbp_code(w: &Wafermap, x: usize, y: usize) -> Option<u8> {
    if !w.is_in(x as isize, y as isize) {
        return None;
    }
    let c = w.value(x, y);
    let mut code = 0u8;
    let mut any = false;
    for (bit, &(dx, dy)) in RING.iter().enumerate() {
        let (nx, ny) = (x as isize + dx, y as isize + dy);
        let v = if w.is_in(nx, ny) {
            any = true;
            w.value(nx as usize, ny as usize)
        } else {
            c
        };
        if v >= c {
            code |= 1 << bit;
        }
    }
    any.then_some(code)
}

fn lbp_codes(w: &Wafermap) -> Result<Vec<u8>> {
    let codes: Vec<u8> = (0..w.height())
        .flat_map(|y| (0..w.width()).map(move |x| (x, y)))
        .filter_map(|(x, y)| lbp_code(w, x, y))
        .collect();
    if codes.is_empty() {
        return Err(Error::NoValidCenters);
    }
    Ok(codes)
}

fn normalized(mut h: Vec<f64>, total: usize) -> Vec<f64> {
    let t = total as f64;
    h.iter_mut().for_each(|v| *v /= t);
    h
}

pub fn lbp_histogram(w: &Wafermap) -> Result<Vec<f64>> {
    let codes = lbp_codes(w)?;
    let mut h = vec![0.0; LBP_BINS];
    for &c in &codes {
        h[c as usize] += 1.0;
    }
    Ok(normalized(h, codes.len()))
}

/// Smallest value among the 8 circular rotations of `code`.
pub fn min_rotation(code: u8) -> u8 {
    (0..8).map(|r| code.rotate_right(r)).min().unwrap()
}

/// Maps each 8-bit code to its rotation-class bin (classes ordered by their
/// minimal representative).
fn rlbp_table() -> &'static [u8; 256] {
    static TABLE: OnceLock<[u8; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut reps: Vec<u8> = (0..=255u8).map(min_rotation).collect();
        reps.sort_unstable();
        reps.dedup();
        debug_assert_eq!(reps.len(), RLBP_BINS);
        let mut t = [0u8; 256];
        for code in 0..=255u8 {
            t[code as usize] = reps.binary_search(&min_rotation(code)).unwrap() as u8;
        }
        t
    })
}

pub fn rlbp_bin(code: u8) -> usize {
    rlbp_table()[code as usize] as usize
}

pub fn rlbp_histogram(w: &Wafermap) -> Result<Vec<f64>> {
    let codes = lbp_codes(w)?;
    let mut h = vec![0.0; RLBP_BINS];
    for &c in &codes {
        h[rlbp_bin(c)] += 1.0;
    }
    Ok(normalized(h, codes.len()))
}

/// Central-difference gradient at a masked-in cell; out-of-mask neighbours
/// take the centre value.
fn gradient(w: &Wafermap, x: usize, y: usize) -> (f64, f64) {
    let c = w.value(x, y);
    let at = |dx: isize, dy: isize| {
        let (nx, ny) = (x as isize + dx, y as isize + dy);
        if w.is_in(nx, ny) {
            w.value(nx as usize, ny as usize)
        } else {
            c
        }
    };
    ((at(1, 0) - at(-1, 0)) / 2.0, (at(0, 1) - at(0, -1)) / 2.0)
}

pub const HOG_EPSILON: f64 = 1e-6;

/// Histogram of oriented gradients on a `cells.0 x cells.1` lattice.
///
/// Orientation is the unsigned gradient angle `atan2(gy, gx) mod 180` with
/// `y` growing downwards, hard-binned into `bins` equal sectors and weighted
/// by magnitude. A grid that does not divide evenly is padded on the
/// right/bottom with out-of-mask cells. Each cell histogram is scaled by
/// `1 / sqrt(|h|^2 + eps^2)`.
pub fn hog_features(w: &Wafermap, cells: (usize, usize), bins: usize) -> Result<Vec<f64>> {
    let (cx, cy) = cells;
    if cx == 0 || cy == 0 || bins == 0 {
        return Err(Error::InvalidConfig("hog cells and bins must be positive".into()));
    }
    let cell_w = w.width().div_ceil(cx);
    let cell_h = w.height().div_ceil(cy);
    let sector = 180.0 / bins as f64;
    let mut out = vec![0.0; cx * cy * bins];
    for y in 0..w.height() {
        for x in 0..w.width() {
            if !w.is_in(x as isize, y as isize) {
                continue;
            }
            let (gx, gy) = gradient(w, x, y);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let theta = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            let b = ((theta / sector) as usize).min(bins - 1);
            let cell = (y / cell_h) * cx + x / cell_w;
            out[cell * bins + b] += mag;
        }
    }
    for h in out.chunks_mut(bins) {
        let norm = (h.iter().map(|v| v * v).sum::<f64>() + HOG_EPSILON * HOG_EPSILON).sqrt();
        h.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(out)
}

pub fn extract_features(w: &Wafermap, cfg: &FeatureConfig) -> Result<FeatureVector> {
    cfg.validate()?;
    let pre;
    let src = match &cfg.mrf {
        Some(m) => {
            pre = mrf_denoise(w, m.lambda, m.iters)?;
            &pre
        }
        None => {
            w.validate()?;
            w
        }
    };
    let mut values = Vec::with_capacity(cfg.len());
    values.extend(lbp_histogram(src)?);
    values.extend(rlbp_histogram(src)?);
    values.extend(hog_features(src, cfg.hog_cells, cfg.hog_bins)?);
    Ok(FeatureVector { values, schema: cfg.schema() })
}

/// Extracts features for every map in parallel; output order follows input.
pub fn extract_batch(maps: &[&Wafermap], cfg: &FeatureConfig) -> Result<Vec<FeatureVector>> {
    maps.par_iter().map(|w| extract_features(w, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::disc_mask;
    use crate::rng::StreamRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn full(w: usize, h: usize, values: Vec<f64>) -> Wafermap {
        Wafermap::new(w, h, values, vec![true; w * h]).unwrap()
    }

    fn noise_disc(n: usize, seed: u64) -> Wafermap {
        let mut rng = StreamRng::seed_from_u64(seed);
        Wafermap::new(n, n, (0..n * n).map(|_| rng.sample(StandardNormal)).collect(), disc_mask(n, n)).unwrap()
    }

    fn variance(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    }

    #[test]
    fn mrf_lambda_zero_is_identity() {
        let w = noise_disc(16, 1);
        let out = mrf_denoise(&w, 0.0, 3).unwrap();
        assert_eq!(out.masked_values(), w.masked_values());
        assert_eq!(out.mask(), w.mask());
    }

    #[test]
    fn mrf_smooths_and_energy_descends() {
        let w = noise_disc(32, 2);
        let (out, energies) = mrf_denoise_trace(&w, 10.0, 8).unwrap();
        assert!(variance(&out.masked_values()) < variance(&w.masked_values()));
        // the identity has zero data term, so start from its energy
        let mut prev = mrf_energy(&w, &w, 10.0);
        for e in energies {
            assert!(e <= prev + 1e-9 * prev.abs(), "{e} > {prev}");
            prev = e;
        }
    }

    #[test]
    fn lbp_hand_example() {
        // neighbours clockwise from top-left are 1,2,3,4,6,7,8,9 around 5
        let w = full(3, 3, vec![1.0, 2.0, 3.0, 9.0, 5.0, 4.0, 8.0, 7.0, 6.0]);
        assert_eq!(lbp_code(&w, 1, 1), Some(0b1111_0000));
    }

    #[test]
    fn constant_map_is_all_ones_code() {
        let h = lbp_histogram(&full(6, 6, vec![2.0; 36])).unwrap();
        assert_eq!(h[255], 1.0);
        assert_eq!(h.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn isolated_cells_are_not_centres() {
        let mut mask = vec![false; 9];
        mask[0] = true;
        mask[8] = true;
        let w = Wafermap::new(3, 3, vec![0.0; 9], mask).unwrap();
        assert_eq!(lbp_histogram(&w).unwrap_err().name(), "no-valid-centers");
        assert_eq!(rlbp_histogram(&w).unwrap_err().name(), "no-valid-centers");
    }

    #[test]
    fn rotation_classes() {
        assert_eq!(rlbp_bin(0b0000_0001), rlbp_bin(0b0001_0000));
        let distinct: std::collections::BTreeSet<usize> = (0..=255u8).map(rlbp_bin).collect();
        assert_eq!(distinct.len(), RLBP_BINS);
        // necklace count by Burnside: (1/8) sum_{d | 8} phi(d) 2^(8/d)
        assert_eq!((256 + 16 + 2 * 4 + 4 * 2) / 8, RLBP_BINS);
    }

    #[test]
    fn lbp_monotone_invariance() {
        let w = noise_disc(24, 3);
        let t = w.map_values(|v| 3.0 * v.exp() + 1.0).unwrap();
        assert_eq!(lbp_histogram(&w).unwrap(), lbp_histogram(&t).unwrap());
    }

    #[test]
    fn rlbp_rotation_invariance() {
        let w = noise_disc(64, 4);
        let a = rlbp_histogram(&w).unwrap();
        let b = rlbp_histogram(&w.rotate90()).unwrap();
        let l1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        assert!(l1 <= 0.02, "{l1}");
    }

    #[test]
    fn hog_constant_is_zero() {
        let h = hog_features(&full(16, 16, vec![1.0; 256]), (8, 8), 9).unwrap();
        assert_eq!(h.len(), 8 * 8 * 9);
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hog_ramp_single_bin() {
        // horizontal bands: values grow down the rows, gradient is vertical
        let w = full(16, 16, (0..256).map(|i| (i / 16) as f64).collect());
        let h = hog_features(&w, (2, 2), 9).unwrap();
        for cell in h.chunks(9) {
            for (b, &v) in cell.iter().enumerate() {
                if b == 4 {
                    assert!((v - 1.0).abs() < 1e-9, "{v}");
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
        // left-to-right ramp lands in the 0 degree bin
        let w = full(16, 16, (0..256).map(|i| (i % 16) as f64).collect());
        let h = hog_features(&w, (2, 2), 9).unwrap();
        assert!(h.chunks(9).all(|c| (c[0] - 1.0).abs() < 1e-9));
    }

    #[test]
    fn hog_pads_uneven_grids() {
        let w = noise_disc(30, 5);
        assert_eq!(hog_features(&w, (8, 8), 9).unwrap().len(), 576);
    }

    #[test]
    fn default_extraction_shape() {
        let w = noise_disc(64, 6);
        let cfg = FeatureConfig::default();
        let f = extract_features(&w, &cfg).unwrap();
        assert_eq!(f.len(), 868);
        assert_eq!(f, extract_features(&w, &cfg).unwrap());
        for name in ["lbp", "rlbp"] {
            let b = f.block(name).unwrap();
            assert!(b.iter().all(|&v| v >= 0.0));
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(f.block("hog").unwrap().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn config_roundtrip_and_validation() {
        let cfg = FeatureConfig { mrf: None, ..Default::default() };
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<FeatureConfig>(&s).unwrap(), cfg);
        assert_eq!(serde_json::from_str::<FeatureConfig>("{}").unwrap(), FeatureConfig::default());
        let bad = FeatureConfig { hog_bins: 0, ..Default::default() };
        assert_eq!(bad.validate().unwrap_err().name(), "invalid-config");
    }
}
