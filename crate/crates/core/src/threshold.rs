//! Classical binarization: global Otsu thresholding on the 256-bin histogram
//! and local Sauvola thresholding backed by integral images.
//!
//! Convention throughout: text is dark. A pixel is text when its intensity
//! falls at or below the threshold.

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Per-pixel text/background labels. `1` = text, `0` = background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl BinaryMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, labels: vec![0; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        debug_assert!(v <= 1);
        self.labels[y * self.width + x] = v;
    }

    pub fn count_text(&self) -> usize {
        self.labels.iter().filter(|&&v| v == 1).count()
    }

    /// Render as a grayscale image in the DIBCO ground-truth convention:
    /// text black (0), background white (1).
    pub fn to_gray(&self) -> GrayImage {
        let data = self.labels.iter().map(|&v| if v == 1 { 0.0 } else { 1.0 }).collect();
        GrayImage { width: self.width, height: self.height, data }
    }

    /// Interpret a grayscale image as a binary map: intensities below 0.5
    /// are text. Inverse of [`BinaryMap::to_gray`] for clean maps.
    pub fn from_gray(img: &GrayImage) -> Self {
        let labels = img.data.iter().map(|&v| u8::from(v < 0.5)).collect();
        Self { width: img.width, height: img.height, labels }
    }
}

/// 256-bin intensity histogram.
#[derive(Clone, Debug)]
pub struct Histogram256 {
    pub counts: [u64; 256],
}

/// Quantize an intensity in `[0, 1]` to its histogram bin.
#[inline]
pub fn intensity_bin(v: f64) -> usize {
    ((v * 255.0 + 0.5).floor() as i64).clamp(0, 255) as usize
}

pub fn histogram256(img: &GrayImage) -> Histogram256 {
    let mut counts = [0u64; 256];
    for &v in &img.data {
        counts[intensity_bin(v)] += 1;
    }
    Histogram256 { counts }
}

/// Between-class variance for the split `bins <= t` / `bins > t`, computed
/// from exact integer sums. Returns 0 when either class is empty.
fn between_class_variance(s0: u64, m0: u64, total: u64, m_total: u64) -> f64 {
    let s1 = total - s0;
    if s0 == 0 || s1 == 0 {
        return 0.0;
    }
    let w0 = s0 as f64 / total as f64;
    let w1 = s1 as f64 / total as f64;
    let mu0 = m0 as f64 / s0 as f64;
    let mu1 = (m_total - m0) as f64 / s1 as f64;
    let d = mu0 - mu1;
    w0 * w1 * (d * d)
}

/// Otsu's threshold: the bin `t` maximizing the between-class variance of
/// the split into text (`bin <= t`) and background (`bin > t`). Ties break
/// to the smallest `t`. Class sums are accumulated as exact integers, so the
/// result agrees bit for bit with an exhaustive scan.
pub fn otsu_threshold(hist: &Histogram256) -> Result<u8> {
    let total: u64 = hist.counts.iter().sum();
    if total == 0 {
        return Err(Error::Argument("otsu: empty histogram".into()));
    }
    let m_total: u64 = hist.counts.iter().enumerate().map(|(i, &c)| i as u64 * c).sum();
    let mut s0 = 0u64;
    let mut m0 = 0u64;
    let mut best_t = 0u8;
    let mut best_var = f64::NEG_INFINITY;
    for t in 0..256usize {
        s0 += hist.counts[t];
        m0 += t as u64 * hist.counts[t];
        let var = between_class_variance(s0, m0, total, m_total);
        if var > best_var {
            best_var = var;
            best_t = t as u8;
        }
    }
    Ok(best_t)
}

/// Label pixels with `bin <= t` as text.
pub fn binarize_global(img: &GrayImage, t: u8) -> BinaryMap {
    let labels = img
        .data
        .iter()
        .map(|&v| u8::from(intensity_bin(v) <= t as usize))
        .collect();
    BinaryMap { width: img.width, height: img.height, labels }
}

/// Convenience composition: histogram, Otsu, global binarization.
pub fn otsu_binarize(img: &GrayImage) -> Result<BinaryMap> {
    Ok(binarize_global(img, otsu_threshold(&histogram256(img))?))
}

/// Sauvola parameters. Defaults follow the original method's constants:
/// window 31, k = 0.5, R = 128.
#[derive(Clone, Copy, Debug)]
pub struct SauvolaParams {
    pub window: usize,
    pub k: f64,
    pub r: f64,
}

impl Default for SauvolaParams {
    fn default() -> Self {
        Self { window: 31, k: 0.5, r: 128.0 }
    }
}

/// Summed-area table with one extra zero row/column, built with compensated
/// accumulation so window sums keep near-ulp accuracy even on large images.
struct IntegralImage {
    width: usize,
    table: Vec<f64>,
}

impl IntegralImage {
    fn build(img: &GrayImage, f: impl Fn(f64) -> f64) -> Self {
        let (w, h) = (img.width, img.height);
        let mut table = vec![0.0f64; (w + 1) * (h + 1)];
        // Kahan-compensated row prefix sums.
        let mut rows = vec![0.0f64; (w + 1) * h];
        for y in 0..h {
            let mut sum = 0.0;
            let mut comp = 0.0;
            for x in 0..w {
                let v = f(img.get(x, y));
                let t = v - comp;
                let s = sum + t;
                comp = (s - sum) - t;
                sum = s;
                rows[y * (w + 1) + x + 1] = sum;
            }
        }
        // Kahan-compensated column accumulation of the row prefixes.
        for x in 0..=w {
            let mut sum = 0.0;
            let mut comp = 0.0;
            for y in 0..h {
                let v = rows[y * (w + 1) + x];
                let t = v - comp;
                let s = sum + t;
                comp = (s - sum) - t;
                sum = s;
                table[(y + 1) * (w + 1) + x] = sum;
            }
        }
        Self { width: w, table }
    }

    /// Sum over the inclusive pixel rectangle `[x0, x1] x [y0, y1]`.
    #[inline]
    fn rect_sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let w = self.width + 1;
        self.table[(y1 + 1) * w + x1 + 1] - self.table[y0 * w + x1 + 1]
            - self.table[(y1 + 1) * w + x0]
            + self.table[y0 * w + x0]
    }
}

fn check_window(img: &GrayImage, window: usize) -> Result<()> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::Argument(format!("sauvola window {window} must be odd and >= 3")));
    }
    if window > 2 * img.width.min(img.height) {
        return Err(Error::Argument(format!(
            "sauvola window {window} too large for {}x{} image",
            img.width, img.height
        )));
    }
    Ok(())
}

/// Per-pixel windowed mean and standard deviation on the 0-255 intensity
/// scale, window centered on the pixel and clipped at the borders. Computed
/// with integral images of x and x^2; the variance term is evaluated in wide
/// precision to avoid cancellation.
pub fn sauvola_stats(img: &GrayImage, window: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_window(img, window)?;
    let (w, h) = (img.width, img.height);
    let r = window / 2;
    let integral = IntegralImage::build(img, |v| v * 255.0);
    let integral_sq = IntegralImage::build(img, |v| (v * 255.0) * (v * 255.0));
    let mut means = vec![0.0; w * h];
    let mut stds = vec![0.0; w * h];
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r).min(h - 1);
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r).min(w - 1);
            let n = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
            let s = integral.rect_sum(x0, y0, x1, y1);
            let s2 = integral_sq.rect_sum(x0, y0, x1, y1);
            let mean = s / n;
            let var = (s2 / n - mean * mean).max(0.0);
            means[y * w + x] = mean;
            stds[y * w + x] = var.sqrt();
        }
    }
    Ok((means, stds))
}

/// Sauvola local threshold: `T = m * (1 + k * (s / R - 1))` on the 0-255
/// scale; a pixel is text when its value is strictly below `T`.
pub fn sauvola_binarize(img: &GrayImage, params: &SauvolaParams) -> Result<BinaryMap> {
    let (means, stds) = sauvola_stats(img, params.window)?;
    let labels = img
        .data
        .iter()
        .zip(means.iter().zip(&stds))
        .map(|(&v, (&m, &s))| {
            let t = m * (1.0 + params.k * (s / params.r - 1.0));
            u8::from(v * 255.0 < t)
        })
        .collect();
    Ok(BinaryMap { width: img.width, height: img.height, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    /// Independent oracle: exhaustive scan recomputing both class sums from
    /// scratch for each candidate threshold.
    fn otsu_brute_force(hist: &Histogram256) -> u8 {
        let total: u64 = hist.counts.iter().sum();
        let m_total: u64 = hist.counts.iter().enumerate().map(|(i, &c)| i as u64 * c).sum();
        let mut best_t = 0u8;
        let mut best_var = f64::NEG_INFINITY;
        for t in 0..256usize {
            let s0: u64 = hist.counts[..=t].iter().sum();
            let m0: u64 = hist.counts[..=t].iter().enumerate().map(|(i, &c)| i as u64 * c).sum();
            let s1 = total - s0;
            let var = if s0 == 0 || s1 == 0 {
                0.0
            } else {
                let w0 = s0 as f64 / total as f64;
                let w1 = s1 as f64 / total as f64;
                let mu0 = m0 as f64 / s0 as f64;
                let mu1 = (m_total - m0) as f64 / s1 as f64;
                let d = mu0 - mu1;
                w0 * w1 * (d * d)
            };
            if var > best_var {
                best_var = var;
                best_t = t as u8;
            }
        }
        best_t
    }

    #[test]
    fn histogram_constant_image() {
        let g = GrayImage::constant(10, 10, 0.5);
        let h = histogram256(&g);
        assert_eq!(h.counts[128], 100);
        assert_eq!(h.counts.iter().sum::<u64>(), 100);
    }

    #[test]
    fn histogram_endpoints() {
        let g = GrayImage::from_data(2, 1, vec![0.0, 1.0]).unwrap();
        let h = histogram256(&g);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[255], 1);
    }

    #[test]
    fn otsu_two_delta_peaks() {
        let mut counts = [0u64; 256];
        counts[50] = 40;
        counts[200] = 60;
        let h = Histogram256 { counts };
        let t = otsu_threshold(&h).unwrap();
        assert!((50..200).contains(&(t as usize)), "t = {t}");
        assert_eq!(t, otsu_brute_force(&h));
    }

    #[test]
    fn otsu_constant_histogram_tie_breaks_to_zero() {
        let mut counts = [0u64; 256];
        counts[77] = 123;
        let h = Histogram256 { counts };
        assert_eq!(otsu_threshold(&h).unwrap(), 0);
    }

    #[test]
    fn otsu_rejects_empty_histogram() {
        let h = Histogram256 { counts: [0; 256] };
        assert!(matches!(otsu_threshold(&h), Err(Error::Argument(_))));
    }

    #[test]
    fn binarize_global_extremes() {
        let g = GrayImage::from_data(2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(binarize_global(&g, 255).labels, vec![1, 1]);
        assert_eq!(binarize_global(&g, 0).labels, vec![1, 0]);
    }

    #[test]
    fn binarize_idempotent_on_own_output() {
        let g = GrayImage::from_data(4, 1, vec![0.1, 0.6, 0.3, 0.9]).unwrap();
        let map = binarize_global(&g, 128);
        let remapped = binarize_global(&map.to_gray(), 128);
        // to_gray writes text as 0.0 and background as 1.0; thresholding that
        // at 128 reproduces the labels.
        assert_eq!(remapped.labels, map.labels);
    }

    #[test]
    fn sauvola_constant_image_is_all_background() {
        let g = GrayImage::constant(16, 16, 0.5);
        let map = sauvola_binarize(&g, &SauvolaParams::default()).unwrap();
        assert_eq!(map.count_text(), 0);
    }

    #[test]
    fn sauvola_detects_dark_stroke() {
        let mut g = GrayImage::constant(32, 32, 0.9);
        for x in 4..28 {
            g.set(x, 16, 0.1);
        }
        let map = sauvola_binarize(&g, &SauvolaParams { window: 15, k: 0.5, r: 128.0 }).unwrap();
        for x in 4..28 {
            assert_eq!(map.get(x, 16), 1, "stroke pixel ({x}, 16) should be text");
        }
        assert_eq!(map.get(0, 0), 0);
    }

    #[test]
    fn sauvola_rejects_bad_windows() {
        let g = GrayImage::constant(8, 8, 0.5);
        assert!(sauvola_binarize(&g, &SauvolaParams { window: 4, k: 0.5, r: 128.0 }).is_err());
        assert!(sauvola_binarize(&g, &SauvolaParams { window: 1, k: 0.5, r: 128.0 }).is_err());
        assert!(sauvola_binarize(&g, &SauvolaParams { window: 17, k: 0.5, r: 128.0 }).is_err());
    }

    /// Naive double-loop oracle for the windowed statistics.
    fn naive_stats(img: &GrayImage, window: usize) -> (Vec<f64>, Vec<f64>) {
        let (w, h) = (img.width, img.height);
        let r = window / 2;
        let mut means = vec![0.0; w * h];
        let mut stds = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut sum = 0.0;
                let mut sum_sq = 0.0;
                let mut n = 0.0;
                for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                    for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                        let v = img.get(xx, yy) * 255.0;
                        sum += v;
                        sum_sq += v * v;
                        n += 1.0;
                    }
                }
                let mean = sum / n;
                means[y * w + x] = mean;
                stds[y * w + x] = (sum_sq / n - mean * mean).max(0.0).sqrt();
            }
        }
        (means, stds)
    }

    #[test]
    fn sauvola_stats_match_naive_oracle() {
        let mut rng = SplitMix64::new(0xCAFE);
        for _ in 0..10 {
            let data: Vec<f64> = (0..32 * 32).map(|_| rng.next_f64()).collect();
            let g = GrayImage::from_data(32, 32, data).unwrap();
            let (m_fast, s_fast) = sauvola_stats(&g, 15).unwrap();
            let (m_naive, s_naive) = naive_stats(&g, 15);
            for i in 0..m_fast.len() {
                assert!((m_fast[i] - m_naive[i]).abs() < 1e-9, "mean at {i}");
                assert!((s_fast[i] - s_naive[i]).abs() < 1e-9, "std at {i}");
            }
        }
    }

    proptest! {
        #[test]
        fn otsu_matches_brute_force(raw in proptest::collection::vec(0u64..50, 256)) {
            let mut counts = [0u64; 256];
            counts.copy_from_slice(&raw);
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let h = Histogram256 { counts };
            prop_assert_eq!(otsu_threshold(&h).unwrap(), otsu_brute_force(&h));
        }

        #[test]
        fn otsu_invariant_under_count_scaling(
            raw in proptest::collection::vec(0u64..20, 256),
            scale in 1u64..9,
        ) {
            let mut counts = [0u64; 256];
            counts.copy_from_slice(&raw);
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let h = Histogram256 { counts };
            let mut scaled = counts;
            for c in scaled.iter_mut() {
                *c *= scale;
            }
            let hs = Histogram256 { counts: scaled };
            prop_assert_eq!(otsu_threshold(&h).unwrap(), otsu_threshold(&hs).unwrap());
        }

        #[test]
        fn binarize_monotone_in_threshold(
            data in proptest::collection::vec(0.0f64..=1.0, 1..64),
            t1 in 0u8..=255,
            t2 in 0u8..=255,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let g = GrayImage::from_data(data.len(), 1, data).unwrap();
            let a = binarize_global(&g, lo);
            let b = binarize_global(&g, hi);
            for (x, y) in a.labels.iter().zip(&b.labels) {
                prop_assert!(x <= y);
            }
        }
    }
}
