//! Iterative residual enhancement.
//!
//! One enhancement pass adds the network's predicted residual back onto its
//! input. A [`RefineChain`] runs `m` such passes, either recurrently (one
//! network reused every pass) or stacked (a distinct network per pass), and
//! the document pipeline composes patchwise chain enhancement with optional
//! iteration fusion, multiscale averaging and locally-uniform rescaling
//! before thresholding.

mod train;

pub use train::{train_chain, EpochStats, TrainConfig, TrainHistory};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{
    extract_patches, reflect_pad, resize_bilinear, stitch_average, GrayImage, PatchEntry, PatchSet,
};
use crate::net::{unet_forward, UNetConfig, UNetParams};
use crate::tensor::Tensor;
use crate::threshold::{sauvola_binarize, SauvolaParams};

/// Iteration count of the full-scale fusion recipe (six passes averaged).
pub const FULL_SCALE_ITERATIONS: usize = 6;

/// Default inference scale set: native plus the three resample factors.
pub const DEFAULT_SCALES: [f64; 4] = [1.0, 0.75, 1.25, 1.5];

/// Fraction of Sauvola-detected ink pixels above which a patch counts as
/// containing an ink trace during locally-uniform rescaling.
pub const DEFAULT_INK_FRACTION: f64 = 0.005;

/// How the chain reuses its networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefineMode {
    /// One network applied repeatedly to its own output.
    Recurrent,
    /// A distinct network per iteration.
    Stacked,
}

impl RefineMode {
    pub fn mode_byte(self) -> u8 {
        match self {
            RefineMode::Recurrent => 0,
            RefineMode::Stacked => 1,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(RefineMode::Recurrent),
            1 => Ok(RefineMode::Stacked),
            other => Err(Error::Argument(format!("unknown refine mode byte {other}"))),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rr" | "recurrent" => Ok(RefineMode::Recurrent),
            "sr" | "stacked" => Ok(RefineMode::Stacked),
            other => Err(Error::Argument(format!("unknown refine mode {other:?} (use rr or sr)"))),
        }
    }
}

impl std::fmt::Display for RefineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RefineMode::Recurrent => write!(f, "rr"),
            RefineMode::Stacked => write!(f, "sr"),
        }
    }
}

/// A trained enhancement chain: mode, networks and iteration count.
#[derive(Clone, Debug)]
pub struct RefineChain {
    pub mode: RefineMode,
    pub nets: Vec<UNetParams>,
    pub m: usize,
    pub cfg: UNetConfig,
}

impl RefineChain {
    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        if self.m == 0 {
            return Err(Error::Argument("refine chain requires m >= 1".into()));
        }
        let expected = match self.mode {
            RefineMode::Recurrent => 1,
            RefineMode::Stacked => self.m,
        };
        if self.nets.len() != expected {
            return Err(Error::Argument(format!(
                "{} chain with m={} requires {expected} network(s), found {}",
                self.mode,
                self.m,
                self.nets.len()
            )));
        }
        Ok(())
    }

    /// All-zero chain: the identity enhancement, useful for debugging.
    pub fn zeros(cfg: UNetConfig, mode: RefineMode, m: usize) -> Self {
        let count = match mode {
            RefineMode::Recurrent => 1,
            RefineMode::Stacked => m,
        };
        let nets = (0..count).map(|_| UNetParams::zeros(&cfg)).collect();
        Self { mode, nets, m, cfg }
    }

    /// Network applied on 0-based iteration `i`.
    pub fn net_for_iteration(&self, i: usize) -> &UNetParams {
        match self.mode {
            RefineMode::Recurrent => &self.nets[0],
            RefineMode::Stacked => &self.nets[i.min(self.nets.len() - 1)],
        }
    }
}

/// One enhancement pass: `net(x) + x`. With `clamp` (inference) the result
/// is clipped into `[0, 1]`; training leaves it unclamped so the loss sees
/// the raw prediction.
pub fn enhance_once(net: &UNetParams, cfg: &UNetConfig, x: &Tensor, clamp: bool) -> Result<Tensor> {
    let (residual, _) = unet_forward(net, cfg, x)?;
    let out = residual.add(x)?;
    Ok(if clamp { out.clamp(0.0, 1.0) } else { out })
}

/// Run `iterations` enhancement passes and return every intermediate
/// iterate. A recurrent chain accepts any iteration count; a stacked chain
/// is limited to its trained depth.
pub fn chain_enhance(
    chain: &RefineChain,
    x: &Tensor,
    iterations: usize,
    clamp: bool,
) -> Result<Vec<Tensor>> {
    chain.validate()?;
    if iterations == 0 {
        return Err(Error::Argument("iterations must be >= 1".into()));
    }
    if chain.mode == RefineMode::Stacked && iterations > chain.m {
        return Err(Error::Argument(format!(
            "stacked chain trained with m={} cannot run {iterations} iterations",
            chain.m
        )));
    }
    let mut iterates = Vec::with_capacity(iterations);
    let mut cur = x.clone();
    for i in 0..iterations {
        cur = enhance_once(chain.net_for_iteration(i), &chain.cfg, &cur, clamp)?;
        iterates.push(cur.clone());
    }
    Ok(iterates)
}

/// Pixelwise mean of the iterates.
pub fn fuse_iterations(iterates: &[GrayImage]) -> Result<GrayImage> {
    let first = iterates
        .first()
        .ok_or_else(|| Error::Argument("fuse_iterations: empty list".into()))?;
    let (w, h) = (first.width, first.height);
    let mut sum = vec![0.0f64; w * h];
    for img in iterates {
        if img.width != w || img.height != h {
            return Err(Error::Argument(format!(
                "fuse_iterations: {}x{} vs {w}x{h}",
                img.width, img.height
            )));
        }
        for (s, &v) in sum.iter_mut().zip(&img.data) {
            *s += v;
        }
    }
    let n = iterates.len() as f64;
    Ok(GrayImage { width: w, height: h, data: sum.into_iter().map(|s| s / n).collect() })
}

/// Locally-uniform rescale: patches whose Sauvola ink fraction reaches
/// `ink_fraction` are min-max stretched to the full range; blank patches are
/// overwritten with background (1.0). Degenerate constant patches flagged as
/// ink are left unchanged.
pub fn local_uniform(
    patches: &PatchSet,
    sauvola: &SauvolaParams,
    ink_fraction: f64,
) -> Result<PatchSet> {
    let area = (patches.patch_size * patches.patch_size) as f64;
    let entries = patches
        .entries
        .iter()
        .map(|entry| {
            let map = sauvola_binarize(&entry.image, sauvola)?;
            let ink = map.count_text() as f64 / area;
            let image = if ink >= ink_fraction {
                let lo = entry.image.data.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = entry.image.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if hi > lo {
                    // Division keeps the endpoints exactly at 0 and 1.
                    let span = hi - lo;
                    GrayImage {
                        width: entry.image.width,
                        height: entry.image.height,
                        data: entry.image.data.iter().map(|&v| (v - lo) / span).collect(),
                    }
                } else {
                    entry.image.clone()
                }
            } else {
                GrayImage::constant(entry.image.width, entry.image.height, 1.0)
            };
            Ok(PatchEntry { image, x: entry.x, y: entry.y })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PatchSet { patch_size: patches.patch_size, entries })
}

/// Options of the document enhancement pipeline.
#[derive(Clone, Debug)]
pub struct EnhanceOptions {
    /// Network input size; patches are sampled at this size (scaled by the
    /// multiscale factors when enabled).
    pub patch_size: usize,
    /// Sampling stride; 0 means half the patch size.
    pub stride: usize,
    /// Number of enhancement passes; 0 means the chain's trained m.
    pub iterations: usize,
    /// Average the per-iteration outputs instead of keeping the last.
    pub fusion: bool,
    /// Average enhancements over [`EnhanceOptions::scales`].
    pub multiscale: bool,
    pub scales: Vec<f64>,
    /// Apply locally-uniform rescaling after enhancement.
    pub uniform: bool,
    pub sauvola: SauvolaParams,
    pub ink_fraction: f64,
}

impl EnhanceOptions {
    pub fn new(patch_size: usize) -> Self {
        Self {
            patch_size,
            stride: 0,
            iterations: 0,
            fusion: false,
            multiscale: false,
            scales: DEFAULT_SCALES.to_vec(),
            uniform: false,
            sauvola: SauvolaParams::default(),
            ink_fraction: DEFAULT_INK_FRACTION,
        }
    }
}

/// Result of document enhancement: the final image, the per-iteration pages
/// (multiscale-averaged when enabled), and any scales skipped because the
/// image was too small for them.
#[derive(Clone, Debug)]
pub struct EnhanceOutcome {
    pub image: GrayImage,
    pub iterates: Vec<GrayImage>,
    pub skipped_scales: Vec<f64>,
}

/// Enhance every patch of one scale and stitch per-iteration pages.
/// Patch work runs in parallel; stitching accumulates in patch order, so the
/// result is identical for any thread count.
fn enhance_pages_at_scale(
    chain: &RefineChain,
    img: &GrayImage,
    scaled_size: usize,
    net_size: usize,
    iterations: usize,
) -> Result<Vec<GrayImage>> {
    let stride = (scaled_size / 2).max(1);
    let patches = extract_patches(img, scaled_size, stride)?;
    let per_patch: Vec<Vec<GrayImage>> = patches
        .entries
        .par_iter()
        .map(|entry| -> Result<Vec<GrayImage>> {
            let input = if scaled_size != net_size {
                resize_bilinear(&entry.image, net_size, net_size)
            } else {
                entry.image.clone()
            };
            let iterates = chain_enhance(chain, &Tensor::from_gray(&input), iterations, true)?;
            iterates
                .into_iter()
                .map(|t| {
                    let g = t.to_gray()?;
                    Ok(if scaled_size != net_size {
                        resize_bilinear(&g, scaled_size, scaled_size)
                    } else {
                        g
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    (0..iterations)
        .map(|k| {
            let entries = patches
                .entries
                .iter()
                .zip(&per_patch)
                .map(|(entry, iterates)| PatchEntry {
                    image: iterates[k].clone(),
                    x: entry.x,
                    y: entry.y,
                })
                .collect();
            stitch_average(&PatchSet { patch_size: scaled_size, entries }, img.width, img.height)
        })
        .collect()
}

/// Full enhancement pipeline: patchwise chain enhancement, then (in order)
/// multiscale averaging, iteration fusion, and locally-uniform rescaling.
pub fn enhance_document(
    chain: &RefineChain,
    img: &GrayImage,
    opts: &EnhanceOptions,
) -> Result<EnhanceOutcome> {
    chain.validate()?;
    let patch = opts.patch_size;
    if patch < chain.cfg.divisor() {
        return Err(Error::Argument(format!(
            "patch size {patch} below network divisor {}",
            chain.cfg.divisor()
        )));
    }
    if patch % chain.cfg.divisor() != 0 {
        return Err(Error::Argument(format!(
            "patch size {patch} not divisible by network divisor {}",
            chain.cfg.divisor()
        )));
    }
    let iterations = if opts.iterations == 0 { chain.m } else { opts.iterations };

    // Small images are reflect-padded up to the patch size and cropped back
    // at the end.
    let pad_x = patch.saturating_sub(img.width);
    let pad_y = patch.saturating_sub(img.height);
    let padded = if pad_x > 0 || pad_y > 0 { reflect_pad(img, 0, pad_x, 0, pad_y) } else { img.clone() };

    let scales: Vec<f64> = if opts.multiscale { opts.scales.clone() } else { vec![1.0] };
    if scales.is_empty() {
        return Err(Error::Argument("scale list is empty".into()));
    }
    let mut skipped = Vec::new();
    let mut per_scale: Vec<Vec<GrayImage>> = Vec::new();
    for &scale in &scales {
        if !(scale > 0.0) {
            return Err(Error::Argument(format!("scale {scale} must be positive")));
        }
        let scaled = ((patch as f64 * scale).round() as usize).max(chain.cfg.divisor());
        if scaled > padded.width.min(padded.height) {
            skipped.push(scale);
            continue;
        }
        per_scale.push(enhance_pages_at_scale(chain, &padded, scaled, patch, iterations)?);
    }
    if per_scale.is_empty() {
        return Err(Error::Argument("every scale was skipped; image too small".into()));
    }

    // Multiscale average per iterate.
    let mut iterate_pages = Vec::with_capacity(iterations);
    for k in 0..iterations {
        let at_k: Vec<GrayImage> = per_scale.iter().map(|pages| pages[k].clone()).collect();
        iterate_pages.push(fuse_iterations(&at_k)?);
    }

    let base = if opts.fusion {
        fuse_iterations(&iterate_pages)?
    } else {
        iterate_pages.last().expect("iterations >= 1").clone()
    };

    let final_page = if opts.uniform {
        let stride = if opts.stride == 0 { (patch / 2).max(1) } else { opts.stride };
        let patches = extract_patches(&base, patch, stride)?;
        let rescaled = local_uniform(&patches, &opts.sauvola, opts.ink_fraction)?;
        stitch_average(&rescaled, base.width, base.height)?
    } else {
        base
    };

    // Crop padding back off.
    let crop = |g: &GrayImage| {
        if pad_x > 0 || pad_y > 0 {
            g.crop(0, 0, img.width, img.height)
        } else {
            g.clone()
        }
    };
    Ok(EnhanceOutcome {
        image: crop(&final_page),
        iterates: iterate_pages.iter().map(|g| crop(g)).collect(),
        skipped_scales: skipped,
    })
}

/// Multiscale enhancement: patch pipelines at every scale, averaged in
/// enhanced-image space. Scales too large for the image are skipped and
/// reported.
pub fn multiscale_enhance(
    chain: &RefineChain,
    img: &GrayImage,
    scales: &[f64],
    patch_size: usize,
) -> Result<(GrayImage, Vec<f64>)> {
    let mut opts = EnhanceOptions::new(patch_size);
    opts.multiscale = true;
    opts.scales = scales.to_vec();
    let outcome = enhance_document(chain, img, &opts)?;
    Ok((outcome.image, outcome.skipped_scales))
}
