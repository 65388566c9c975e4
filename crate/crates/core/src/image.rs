//! Grayscale raster substrate: lossless binary PGM I/O, sliding-window patch
//! extraction, overlap-averaged stitching, bilinear resizing and quarter-turn
//! rotation.
//!
//! Intensities are `f64` in `[0, 1]`, stored row-major. All operations here
//! are pure functions on immutable inputs.

use crate::error::{Error, Result};

/// Single-channel raster with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, `width * height` values.
    pub data: Vec<f64>,
}

impl GrayImage {
    /// Build from raw data, validating the type invariants.
    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Argument(format!(
                "data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Argument(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self { width, height, data })
    }

    /// Constant-intensity image.
    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        debug_assert!(width > 0 && height > 0 && (0.0..=1.0).contains(&value));
        Self { width, height, data: vec![value; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Copy the `w`x`h` rectangle whose top-left corner is `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> GrayImage {
        assert!(x + w <= self.width && y + h <= self.height, "crop out of bounds");
        let mut data = Vec::with_capacity(w * h);
        for yy in y..y + h {
            data.extend_from_slice(&self.row(yy)[x..x + w]);
        }
        GrayImage { width: w, height: h, data }
    }

    /// Mean absolute difference to another image of the same size.
    pub fn l1_distance(&self, other: &GrayImage) -> Result<f64> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape(format!(
                "l1_distance: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(sum / self.data.len() as f64)
    }
}

/// A square patch together with its offset in the source image.
#[derive(Clone, Debug)]
pub struct PatchEntry {
    pub image: GrayImage,
    /// Column offset of the patch's left edge.
    pub x: usize,
    /// Row offset of the patch's top edge.
    pub y: usize,
}

/// Patches cut from one source image by a sliding window.
#[derive(Clone, Debug)]
pub struct PatchSet {
    pub patch_size: usize,
    pub entries: Vec<PatchEntry>,
}

// ---------------------------------------------------------------------------
// PGM I/O
// ---------------------------------------------------------------------------

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Format { offset: self.pos, reason: reason.into() }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_whitespace(&mut self) -> Result<()> {
        let start = self.pos;
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\r' | b'\n')) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err("expected whitespace"));
        }
        Ok(())
    }

    fn parse_uint(&mut self, what: &str) -> Result<u32> {
        let mut value: u64 = 0;
        let start = self.pos;
        while let Some(b) = self.peek() {
            if !b.is_ascii_digit() {
                break;
            }
            value = value * 10 + u64::from(b - b'0');
            if value > u64::from(u32::MAX) {
                return Err(self.err(format!("{what} out of range")));
            }
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err(format!("expected digits for {what}")));
        }
        Ok(value as u32)
    }
}

/// Parse the `P5`/`P6` header shared by PGM and PPM. Returns
/// `(width, height, maxval, payload_offset)`.
pub(crate) fn parse_netpbm_header(bytes: &[u8], magic: &[u8; 2]) -> Result<(usize, usize, u32, usize)> {
    let mut cur = ByteCursor { bytes, pos: 0 };
    if bytes.len() < 2 || &bytes[..2] != magic {
        let got = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(Error::Format {
            offset: 0,
            reason: format!(
                "unsupported magic {:?}, expected {:?}",
                got,
                String::from_utf8_lossy(magic)
            ),
        });
    }
    cur.pos = 2;
    cur.skip_whitespace()?;
    let width = cur.parse_uint("width")?;
    cur.skip_whitespace()?;
    let height = cur.parse_uint("height")?;
    cur.skip_whitespace()?;
    let maxval_offset = cur.pos;
    let maxval = cur.parse_uint("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format { offset: 2, reason: "zero image dimension".into() });
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format {
            offset: maxval_offset,
            reason: format!("maxval {maxval} unsupported (need 1..=255)"),
        });
    }
    // Exactly one whitespace byte separates the header from the payload.
    match cur.peek() {
        Some(b' ' | b'\t' | b'\r' | b'\n') => cur.pos += 1,
        _ => return Err(cur.err("expected single whitespace before payload")),
    }
    Ok((width as usize, height as usize, maxval, cur.pos))
}

/// Decode a binary (P5) PGM. Intensities are mapped `v / maxval` into `[0, 1]`.
pub fn load_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let (width, height, maxval, payload) = parse_netpbm_header(bytes, b"P5")?;
    let need = width * height;
    let body = &bytes[payload..];
    if body.len() < need {
        return Err(Error::Format {
            offset: payload + body.len(),
            reason: format!("truncated payload: need {need} bytes, found {}", body.len()),
        });
    }
    let inv = 1.0 / f64::from(maxval);
    let data = body[..need].iter().map(|&b| f64::from(b) * inv).collect();
    Ok(GrayImage { width, height, data })
}

/// Encode as binary (P5) PGM with maxval 255. Each intensity is quantized
/// with round-half-up: `round(v * 255)`.
pub fn save_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

// ---------------------------------------------------------------------------
// Patch extraction and stitching
// ---------------------------------------------------------------------------

/// Sliding-window offsets along one axis: multiples of `stride`, with the
/// final offset clamped flush to the far border so every pixel is covered.
/// A stride beyond the patch size would leave gaps between windows, so the
/// effective step is capped at `size`.
fn axis_offsets(extent: usize, size: usize, stride: usize) -> Vec<usize> {
    let step = stride.min(size);
    let last = extent - size;
    let mut offsets = Vec::new();
    let mut o = 0;
    loop {
        offsets.push(o);
        if o >= last {
            break;
        }
        o = (o + step).min(last);
    }
    offsets
}

/// Cut `size`x`size` patches on a stride grid. The final row/column of
/// patches is flush with the image border even when the extent is not a
/// stride multiple, so the union of patches covers every pixel.
pub fn extract_patches(img: &GrayImage, size: usize, stride: usize) -> Result<PatchSet> {
    if size == 0 || size > img.width.min(img.height) {
        return Err(Error::Argument(format!(
            "patch size {size} invalid for {}x{} image",
            img.width, img.height
        )));
    }
    if stride == 0 {
        return Err(Error::Argument("stride must be >= 1".into()));
    }
    let xs = axis_offsets(img.width, size, stride);
    let ys = axis_offsets(img.height, size, stride);
    let mut entries = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            entries.push(PatchEntry { image: img.crop(x, y, size, size), x, y });
        }
    }
    Ok(PatchSet { patch_size: size, entries })
}

/// Reassemble an image from overlapping patches; overlapping values are
/// averaged. Accumulation runs in entry order, so results are reproducible
/// bit for bit.
pub fn stitch_average(patches: &PatchSet, width: usize, height: usize) -> Result<GrayImage> {
    let size = patches.patch_size;
    let mut sum = vec![0.0f64; width * height];
    let mut count = vec![0u32; width * height];
    for entry in &patches.entries {
        if entry.image.width != size || entry.image.height != size {
            return Err(Error::Argument(format!(
                "patch at ({}, {}) is {}x{}, expected {size}x{size}",
                entry.x, entry.y, entry.image.width, entry.image.height
            )));
        }
        if entry.x + size > width || entry.y + size > height {
            return Err(Error::Argument(format!(
                "patch at ({}, {}) exceeds {width}x{height} bounds",
                entry.x, entry.y
            )));
        }
        for py in 0..size {
            let dst = (entry.y + py) * width + entry.x;
            let src = py * size;
            for px in 0..size {
                sum[dst + px] += entry.image.data[src + px];
                count[dst + px] += 1;
            }
        }
    }
    if let Some(i) = count.iter().position(|&c| c == 0) {
        return Err(Error::Coverage { x: i % width, y: i / width });
    }
    let data = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| s / f64::from(c))
        .collect();
    Ok(GrayImage { width, height, data })
}

// ---------------------------------------------------------------------------
// Resampling and rotation
// ---------------------------------------------------------------------------

/// Bilinear resize with half-pixel-center mapping
/// (`src = (dst + 0.5) * scale - 0.5`, clamped to the source grid).
/// Resizing to the same size is an exact identity. Interpolated values are
/// clamped to the hull of the four source corners, so the output range never
/// exceeds the input range.
pub fn resize_bilinear(img: &GrayImage, new_w: usize, new_h: usize) -> GrayImage {
    assert!(new_w >= 1 && new_h >= 1, "target dimensions must be >= 1");
    let sx = img.width as f64 / new_w as f64;
    let sy = img.height as f64 / new_h as f64;
    let mut data = Vec::with_capacity(new_w * new_h);
    for dy in 0..new_h {
        let src_y = ((dy as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f64);
        let y0 = src_y.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let fy = src_y - y0 as f64;
        for dx in 0..new_w {
            let src_x = ((dx as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f64);
            let x0 = src_x.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let fx = src_x - x0 as f64;
            let p00 = img.get(x0, y0);
            let p10 = img.get(x1, y0);
            let p01 = img.get(x0, y1);
            let p11 = img.get(x1, y1);
            let top = p00 + fx * (p10 - p00);
            let bottom = p01 + fx * (p11 - p01);
            let v = top + fy * (bottom - top);
            let lo = p00.min(p10).min(p01).min(p11);
            let hi = p00.max(p10).max(p01).max(p11);
            data.push(v.clamp(lo, hi));
        }
    }
    GrayImage { width: new_w, height: new_h, data }
}

/// Rotate by quarter turns, positive = clockwise. The count is taken modulo
/// 4; odd turns swap the dimensions. The permutation is exact.
pub fn rotate90(img: &GrayImage, quarter_turns: u8) -> GrayImage {
    let turns = quarter_turns % 4;
    let (w, h) = (img.width, img.height);
    match turns {
        0 => img.clone(),
        1 => {
            // (x, y) -> (h - 1 - y, x) in the w'=h, h'=w frame.
            let mut data = vec![0.0; w * h];
            for y in 0..h {
                for x in 0..w {
                    data[x * h + (h - 1 - y)] = img.get(x, y);
                }
            }
            GrayImage { width: h, height: w, data }
        }
        2 => {
            let data = img.data.iter().rev().copied().collect();
            GrayImage { width: w, height: h, data }
        }
        3 => {
            let mut data = vec![0.0; w * h];
            for y in 0..h {
                for x in 0..w {
                    data[(w - 1 - x) * h + y] = img.get(x, y);
                }
            }
            GrayImage { width: h, height: w, data }
        }
        _ => unreachable!(),
    }
}

/// Pad by mirroring rows/columns at the borders (edge pixel included).
/// Supports pads up to the source extent per reflection, which is all the
/// enhancement pipeline ever needs.
pub fn reflect_pad(img: &GrayImage, left: usize, right: usize, top: usize, bottom: usize) -> GrayImage {
    let w = img.width + left + right;
    let h = img.height + top + bottom;
    let reflect = |t: isize, n: usize| -> usize {
        let n = n as isize;
        let period = 2 * n;
        let mut m = t % period;
        if m < 0 {
            m += period;
        }
        (if m < n { m } else { period - 1 - m }) as usize
    };
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let sy = reflect(y as isize - top as isize, img.height);
        for x in 0..w {
            let sx = reflect(x as isize - left as isize, img.width);
            data.push(img.get(sx, sy));
        }
    }
    GrayImage { width: w, height: h, data }
}
