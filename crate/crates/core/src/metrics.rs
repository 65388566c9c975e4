//! Contest evaluation metrics for binary document maps: F-measure, pseudo
//! F-measure on the thinned ground truth, PSNR, and the distance reciprocal
//! distortion metric (DRD), plus the skeletonization and block counting they
//! rely on. Text (`1`) is the positive class everywhere.

use crate::error::{Error, Result};
use crate::threshold::BinaryMap;

/// Pixel-level confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

pub fn confusion(pred: &BinaryMap, gt: &BinaryMap) -> Result<Confusion> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::Argument(format!(
            "confusion: {}x{} vs {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let mut c = Confusion::default();
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        match (p, g) {
            (1, 1) => c.true_pos += 1,
            (1, 0) => c.false_pos += 1,
            (0, 1) => c.false_neg += 1,
            _ => c.true_neg += 1,
        }
    }
    Ok(c)
}

fn precision(c: &Confusion) -> f64 {
    if c.true_pos + c.false_pos == 0 {
        0.0
    } else {
        c.true_pos as f64 / (c.true_pos + c.false_pos) as f64
    }
}

fn recall(c: &Confusion) -> f64 {
    if c.true_pos + c.false_neg == 0 {
        0.0
    } else {
        c.true_pos as f64 / (c.true_pos + c.false_neg) as f64
    }
}

/// F-measure in percent: harmonic mean of precision and recall, 0 when both
/// vanish.
pub fn f_measure(c: &Confusion) -> f64 {
    let p = precision(c);
    let r = recall(c);
    if p + r == 0.0 {
        0.0
    } else {
        100.0 * 2.0 * p * r / (p + r)
    }
}

// ---------------------------------------------------------------------------
// Skeletonization (Zhang-Suen thinning)
// ---------------------------------------------------------------------------

/// Thin text regions to (near) single-pixel width with the two-subiteration
/// Zhang-Suen algorithm, iterated to a fixpoint. Output text pixels are a
/// subset of the input's; 8-connectivity of each component is preserved.
/// Endpoint policy: bar ends erode by a pixel or two (a solid 3x7 bar thins
/// to a 4-pixel centerline segment); pixels outside the map count as
/// background.
pub fn skeletonize(map: &BinaryMap) -> BinaryMap {
    let (w, h) = (map.width, map.height);
    let mut grid = map.labels.clone();
    let at = |g: &[u8], x: isize, y: isize| -> u8 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0
        } else {
            g[y as usize * w + x as usize]
        }
    };
    // Neighbors P2..P9 clockwise from north.
    const OFFS: [(isize, isize); 8] =
        [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];
    let mut to_delete = Vec::new();
    loop {
        let mut changed = false;
        for phase in 0..2 {
            to_delete.clear();
            for y in 0..h as isize {
                for x in 0..w as isize {
                    if at(&grid, x, y) == 0 {
                        continue;
                    }
                    let n: Vec<u8> = OFFS.iter().map(|&(dx, dy)| at(&grid, x + dx, y + dy)).collect();
                    let b: u8 = n.iter().sum();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| n[i] == 0 && n[(i + 1) % 8] == 1).count();
                    if a != 1 {
                        continue;
                    }
                    // n[0]=P2 (N), n[2]=P4 (E), n[4]=P6 (S), n[6]=P8 (W)
                    let ok = if phase == 0 {
                        n[0] * n[2] * n[4] == 0 && n[2] * n[4] * n[6] == 0
                    } else {
                        n[0] * n[2] * n[6] == 0 && n[0] * n[4] * n[6] == 0
                    };
                    if ok {
                        to_delete.push(y as usize * w + x as usize);
                    }
                }
            }
            if !to_delete.is_empty() {
                changed = true;
                for &i in &to_delete {
                    grid[i] = 0;
                }
            }
        }
        if !changed {
            break;
        }
    }
    BinaryMap { width: w, height: h, labels: grid }
}

/// Pseudo F-measure: precision from the plain confusion, recall replaced by
/// the fraction of skeletonized ground-truth text covered by the prediction.
pub fn pseudo_f_measure(pred: &BinaryMap, gt: &BinaryMap) -> Result<f64> {
    let c = confusion(pred, gt)?;
    let skel = skeletonize(gt);
    let skel_total = skel.count_text() as f64;
    let covered = skel
        .labels
        .iter()
        .zip(&pred.labels)
        .filter(|(&s, &p)| s == 1 && p == 1)
        .count() as f64;
    let p_recall = if skel_total == 0.0 { 0.0 } else { covered / skel_total };
    let p = precision(&c);
    if p + p_recall == 0.0 {
        Ok(0.0)
    } else {
        Ok(100.0 * 2.0 * p * p_recall / (p + p_recall))
    }
}

/// PSNR cap reported for identical maps (MSE of zero).
pub const PSNR_CAP_DB: f64 = 100.0;

/// Peak signal-to-noise ratio between binary maps with unit text/background
/// contrast: `10 log10(1 / MSE)` where MSE is the flipped-pixel fraction.
/// Identical maps report [`PSNR_CAP_DB`].
pub fn psnr(pred: &BinaryMap, gt: &BinaryMap) -> Result<f64> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::Argument(format!(
            "psnr: {}x{} vs {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let flipped = pred.labels.iter().zip(&gt.labels).filter(|(p, g)| p != g).count();
    if flipped == 0 {
        return Ok(PSNR_CAP_DB);
    }
    let mse = flipped as f64 / pred.labels.len() as f64;
    Ok(10.0 * (1.0 / mse).log10())
}

/// Number of non-uniform 8x8 blocks: the ground truth is tiled into
/// non-overlapping 8x8 blocks (partial blocks at the edges included) and a
/// block counts when it contains both labels.
pub fn nubn(gt: &BinaryMap) -> u64 {
    let mut count = 0;
    for by in (0..gt.height).step_by(8) {
        for bx in (0..gt.width).step_by(8) {
            let mut has_text = false;
            let mut has_bg = false;
            'block: for y in by..(by + 8).min(gt.height) {
                for x in bx..(bx + 8).min(gt.width) {
                    if gt.get(x, y) == 1 {
                        has_text = true;
                    } else {
                        has_bg = true;
                    }
                    if has_text && has_bg {
                        break 'block;
                    }
                }
            }
            if has_text && has_bg {
                count += 1;
            }
        }
    }
    count
}

/// The 5x5 reciprocal-distance weight matrix, normalized to unit sum.
/// Center weight is 1 before normalization.
fn drd_weights() -> [f64; 25] {
    let mut w = [0.0f64; 25];
    for i in 0..5usize {
        for j in 0..5usize {
            let di = i as f64 - 2.0;
            let dj = j as f64 - 2.0;
            w[i * 5 + j] = if i == 2 && j == 2 { 1.0 } else { 1.0 / (di * di + dj * dj).sqrt() };
        }
    }
    let total: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= total;
    }
    w
}

/// Distance reciprocal distortion: for each flipped pixel, the weighted
/// disagreement between the prediction's value there and the ground truth
/// over a 5x5 neighborhood (ground truth border-replicated), summed over all
/// flipped pixels and divided by [`nubn`]. Undefined when `nubn` is zero.
pub fn drd(pred: &BinaryMap, gt: &BinaryMap) -> Result<f64> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::Argument(format!(
            "drd: {}x{} vs {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let blocks = nubn(gt);
    if blocks == 0 {
        return Err(Error::Undefined("drd: ground truth has no non-uniform 8x8 block".into()));
    }
    let weights = drd_weights();
    let (w, h) = (pred.width, pred.height);
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let p = pred.get(x, y);
            if p == gt.get(x, y) {
                continue;
            }
            let mut dk = 0.0;
            for i in 0..5usize {
                for j in 0..5usize {
                    let ny = (y as isize + i as isize - 2).clamp(0, h as isize - 1) as usize;
                    let nx = (x as isize + j as isize - 2).clamp(0, w as isize - 1) as usize;
                    if gt.get(nx, ny) != p {
                        dk += weights[i * 5 + j];
                    }
                }
            }
            total += dk;
        }
    }
    Ok(total / blocks as f64)
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

/// One evaluation record. Serialized as flat `key=value` lines with the
/// field names `fm`, `fps`, `psnr`, `drd`, `nubn`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub fm: f64,
    pub fps: f64,
    pub psnr: f64,
    pub drd: f64,
    pub nubn: u64,
}

impl MetricsReport {
    /// Evaluate all four metrics for a prediction against ground truth.
    pub fn evaluate(pred: &BinaryMap, gt: &BinaryMap) -> Result<Self> {
        let c = confusion(pred, gt)?;
        Ok(Self {
            fm: f_measure(&c),
            fps: pseudo_f_measure(pred, gt)?,
            psnr: psnr(pred, gt)?,
            drd: drd(pred, gt)?,
            nubn: nubn(gt),
        })
    }

    pub fn to_kv(&self) -> String {
        format!(
            "fm={:.6}\nfps={:.6}\npsnr={:.6}\ndrd={:.6}\nnubn={}\n",
            self.fm, self.fps, self.psnr, self.drd, self.nubn
        )
    }

    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut fm = None;
        let mut fps = None;
        let mut psnr = None;
        let mut drd = None;
        let mut nubn = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("report line without '=': {line}")))?;
            let bad = || Error::Argument(format!("bad value for {key}: {value}"));
            match key {
                "fm" => fm = Some(value.parse().map_err(|_| bad())?),
                "fps" => fps = Some(value.parse().map_err(|_| bad())?),
                "psnr" => psnr = Some(value.parse().map_err(|_| bad())?),
                "drd" => drd = Some(value.parse().map_err(|_| bad())?),
                "nubn" => nubn = Some(value.parse::<u64>().map_err(|_| bad())?),
                other => return Err(Error::Argument(format!("unknown report key: {other}"))),
            }
        }
        match (fm, fps, psnr, drd, nubn) {
            (Some(fm), Some(fps), Some(psnr), Some(drd), Some(nubn)) => {
                Ok(Self { fm, fps, psnr, drd, nubn })
            }
            _ => Err(Error::Argument("report is missing fields".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn map(w: usize, h: usize, labels: &[u8]) -> BinaryMap {
        assert_eq!(labels.len(), w * h);
        BinaryMap { width: w, height: h, labels: labels.to_vec() }
    }

    fn random_map(w: usize, h: usize, rng: &mut SplitMix64, text_prob: f64) -> BinaryMap {
        let labels = (0..w * h).map(|_| u8::from(rng.next_f64() < text_prob)).collect();
        BinaryMap { width: w, height: h, labels }
    }

    #[test]
    fn confusion_perfect_prediction() {
        let mut gt = BinaryMap::new(10, 10);
        for i in 0..10 {
            gt.labels[i] = 1;
        }
        let c = confusion(&gt, &gt).unwrap();
        assert_eq!(c, Confusion { true_pos: 10, false_pos: 0, false_neg: 0, true_neg: 90 });
    }

    #[test]
    fn confusion_all_background_prediction() {
        let mut gt = BinaryMap::new(10, 1);
        gt.labels = vec![1; 10];
        let pred = BinaryMap::new(10, 1);
        let c = confusion(&pred, &gt).unwrap();
        assert_eq!(c.false_neg, 10);
        assert_eq!(c.true_pos, 0);
    }

    #[test]
    fn confusion_complement_swaps_counts() {
        let mut rng = SplitMix64::new(3);
        let gt = random_map(16, 16, &mut rng, 0.3);
        let pred = random_map(16, 16, &mut rng, 0.3);
        let inv = BinaryMap {
            width: pred.width,
            height: pred.height,
            labels: pred.labels.iter().map(|&v| 1 - v).collect(),
        };
        let c = confusion(&pred, &gt).unwrap();
        let ci = confusion(&inv, &gt).unwrap();
        assert_eq!(c.true_pos, ci.false_neg);
        assert_eq!(c.false_neg, ci.true_pos);
        assert_eq!(c.false_pos, ci.true_neg);
        assert_eq!(c.true_neg, ci.false_pos);
    }

    #[test]
    fn f_measure_fixture() {
        let c = Confusion { true_pos: 8, false_pos: 2, false_neg: 2, true_neg: 88 };
        assert!((f_measure(&c) - 80.0).abs() < 1e-9);
    }

    #[test]
    fn f_measure_degenerate_cases() {
        assert_eq!(f_measure(&Confusion { true_pos: 5, ..Default::default() }), 100.0);
        assert_eq!(f_measure(&Confusion { false_neg: 5, ..Default::default() }), 0.0);
    }

    #[test]
    fn skeleton_empty_and_single_pixel() {
        let empty = BinaryMap::new(5, 5);
        assert_eq!(skeletonize(&empty), empty);
        let mut single = BinaryMap::new(5, 5);
        single.set(2, 2, 1);
        assert_eq!(skeletonize(&single), single);
    }

    #[test]
    fn skeleton_of_bar_is_thin_centerline() {
        // Solid 3x7 bar. The hand-run thinning fixpoint is the 4-pixel
        // middle-row segment at x = 1..=4 (endpoints erode).
        let gt = map(7, 3, &[1; 21]);
        let skel = skeletonize(&gt);
        let mut expect = BinaryMap::new(7, 3);
        for x in 1..=4 {
            expect.set(x, 1, 1);
        }
        assert_eq!(skel, expect);
    }

    #[test]
    fn pseudo_f_full_skeleton_coverage_at_half_width() {
        // Ground truth: 3-wide bar. Prediction: only the middle row.
        // The prediction covers the whole skeleton and is a subset of the
        // ground truth, so pseudo-F is 100 while plain F-measure is not.
        let gt = map(7, 3, &[1; 21]);
        let mut pred = BinaryMap::new(7, 3);
        for x in 0..7 {
            pred.set(x, 1, 1);
        }
        let fps = pseudo_f_measure(&pred, &gt).unwrap();
        assert!((fps - 100.0).abs() < 1e-9, "fps = {fps}");
        let fm = f_measure(&confusion(&pred, &gt).unwrap());
        assert!(fm < 100.0);
    }

    #[test]
    fn pseudo_f_missing_skeleton_is_zero() {
        let gt = map(7, 3, &[1; 21]);
        let pred = BinaryMap::new(7, 3); // all background
        assert_eq!(pseudo_f_measure(&pred, &gt).unwrap(), 0.0);
    }

    #[test]
    fn psnr_fixtures() {
        let mut rng = SplitMix64::new(5);
        let gt = random_map(10, 10, &mut rng, 0.4);
        assert_eq!(psnr(&gt, &gt).unwrap(), PSNR_CAP_DB);
        let inv = BinaryMap {
            width: 10,
            height: 10,
            labels: gt.labels.iter().map(|&v| 1 - v).collect(),
        };
        assert!((psnr(&inv, &gt).unwrap() - 0.0).abs() < 1e-12);
        // 1% flipped -> 20 dB.
        let mut one = gt.clone();
        one.labels[0] = 1 - one.labels[0];
        assert!((psnr(&one, &gt).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_decreases_with_more_flips() {
        let gt = BinaryMap::new(16, 16);
        let mut prev = f64::INFINITY;
        for flips in 1..10 {
            let mut pred = gt.clone();
            for i in 0..flips {
                pred.labels[i * 7] = 1;
            }
            let v = psnr(&pred, &gt).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn nubn_examples() {
        assert_eq!(nubn(&BinaryMap::new(16, 16)), 0);
        let mut half = BinaryMap::new(8, 8);
        for i in 0..32 {
            half.labels[i] = 1;
        }
        assert_eq!(nubn(&half), 1);
        // 16x8: text confined to the left 8x8 block.
        let mut left = BinaryMap::new(16, 8);
        left.set(3, 3, 1);
        assert_eq!(nubn(&left), 1);
    }

    #[test]
    fn drd_zero_for_equal_maps() {
        let mut gt = BinaryMap::new(16, 16);
        gt.set(2, 2, 1);
        assert_eq!(drd(&gt, &gt).unwrap(), 0.0);
    }

    #[test]
    fn drd_single_interior_flip() {
        // One flipped pixel deep inside uniform background: all 25 weighted
        // neighbors disagree, so DRD_k is the full unit weight sum.
        let mut gt = BinaryMap::new(32, 32);
        gt.set(1, 1, 1); // one mixed block -> nubn = 1
        let mut pred = gt.clone();
        pred.set(20, 20, 1);
        let v = drd(&pred, &gt).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "drd = {v}");
    }

    #[test]
    fn drd_undefined_without_nonuniform_blocks() {
        let gt = BinaryMap::new(16, 16);
        let mut pred = gt.clone();
        pred.set(0, 0, 1);
        assert!(matches!(drd(&pred, &gt), Err(Error::Undefined(_))));
    }

    /// Naive per-pixel oracle recomputing the weight matrix from scratch.
    fn drd_naive(pred: &BinaryMap, gt: &BinaryMap) -> f64 {
        let mut wsum = 0.0;
        let mut w = [[0.0f64; 5]; 5];
        for i in 0..5usize {
            for j in 0..5usize {
                let di = i as f64 - 2.0;
                let dj = j as f64 - 2.0;
                w[i][j] = if i == 2 && j == 2 { 1.0 } else { 1.0 / (di * di + dj * dj).sqrt() };
            }
        }
        for row in &w {
            for v in row {
                wsum += v;
            }
        }
        for row in w.iter_mut() {
            for v in row.iter_mut() {
                *v /= wsum;
            }
        }
        let mut blocks = 0u64;
        for by in (0..gt.height).step_by(8) {
            for bx in (0..gt.width).step_by(8) {
                let mut text = 0u64;
                let mut bg = 0u64;
                for y in by..(by + 8).min(gt.height) {
                    for x in bx..(bx + 8).min(gt.width) {
                        if gt.get(x, y) == 1 {
                            text += 1;
                        } else {
                            bg += 1;
                        }
                    }
                }
                if text > 0 && bg > 0 {
                    blocks += 1;
                }
            }
        }
        let mut total = 0.0;
        for y in 0..gt.height {
            for x in 0..gt.width {
                let p = pred.get(x, y);
                if p == gt.get(x, y) {
                    continue;
                }
                let mut dk = 0.0;
                for i in 0..5usize {
                    for j in 0..5usize {
                        let ny = (y as isize + i as isize - 2).clamp(0, gt.height as isize - 1);
                        let nx = (x as isize + j as isize - 2).clamp(0, gt.width as isize - 1);
                        if gt.get(nx as usize, ny as usize) != p {
                            dk += w[i][j];
                        }
                    }
                }
                total += dk;
            }
        }
        total / blocks as f64
    }

    #[test]
    fn drd_matches_naive_oracle_exactly() {
        let mut rng = SplitMix64::new(0xD12D);
        for _ in 0..25 {
            let gt = random_map(32, 32, &mut rng, 0.3);
            let pred = random_map(32, 32, &mut rng, 0.3);
            if nubn(&gt) == 0 {
                continue;
            }
            let fast = drd(&pred, &gt).unwrap();
            let naive = drd_naive(&pred, &gt);
            assert_eq!(fast.to_bits(), naive.to_bits(), "fast {fast} vs naive {naive}");
        }
    }

    #[test]
    fn report_kv_roundtrip() {
        let r = MetricsReport { fm: 80.0, fps: 91.25, psnr: 20.0, drd: 1.5, nubn: 12 };
        let parsed = MetricsReport::parse_kv(&r.to_kv()).unwrap();
        assert!((parsed.fm - r.fm).abs() < 1e-6);
        assert!((parsed.fps - r.fps).abs() < 1e-6);
        assert!((parsed.psnr - r.psnr).abs() < 1e-6);
        assert!((parsed.drd - r.drd).abs() < 1e-6);
        assert_eq!(parsed.nubn, r.nubn);
        assert!(MetricsReport::parse_kv("fm=1\nbogus=2\n").is_err());
    }

    proptest! {
        #[test]
        fn skeleton_subset_and_idempotent(seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            // Blob-ish map: a few filled rectangles.
            let mut gt = BinaryMap::new(24, 24);
            for _ in 0..3 {
                let x0 = rng.range_usize(18);
                let y0 = rng.range_usize(18);
                let w = 2 + rng.range_usize(6);
                let h = 2 + rng.range_usize(6);
                for y in y0..(y0 + h).min(24) {
                    for x in x0..(x0 + w).min(24) {
                        gt.set(x, y, 1);
                    }
                }
            }
            let skel = skeletonize(&gt);
            for (s, g) in skel.labels.iter().zip(&gt.labels) {
                prop_assert!(s <= g);
            }
            prop_assert_eq!(skeletonize(&skel), skel);
        }

        #[test]
        fn fm_bounds_and_equality(seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let gt = random_map(12, 12, &mut rng, 0.4);
            prop_assume!(gt.count_text() > 0);
            let pred = random_map(12, 12, &mut rng, 0.4);
            let fm = f_measure(&confusion(&pred, &gt).unwrap());
            prop_assert!((0.0..=100.0).contains(&fm));
            prop_assert_eq!(fm == 100.0, pred == gt);
        }

        #[test]
        fn drd_zero_iff_equal(seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let gt = random_map(16, 16, &mut rng, 0.35);
            prop_assume!(nubn(&gt) > 0);
            let pred = random_map(16, 16, &mut rng, 0.35);
            let v = drd(&pred, &gt).unwrap();
            prop_assert_eq!(v == 0.0, pred == gt);
        }
    }
}
