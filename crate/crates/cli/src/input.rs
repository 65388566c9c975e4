//! Image ingestion at the command-line boundary. Grayscale PGM (P5) is the
//! native format; binary PPM (P6) color input is accepted and converted to
//! grayscale with BT.601 luma weights.

use std::path::Path;

use inkworks_core::image::{load_pgm, GrayImage};
use inkworks_core::{Error, Result};

fn parse_p6(bytes: &[u8]) -> Result<GrayImage> {
    // Minimal P6 header: magic, width, height, maxval, single whitespace.
    let mut pos = 2usize;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            *field = *field * 10 + u32::from(bytes[pos] - b'0');
            pos += 1;
        }
        if pos == start {
            return Err(Error::Format { offset: pos, reason: "expected digits in P6 header".into() });
        }
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 || maxval == 0 || maxval > 255 {
        return Err(Error::Format { offset: 2, reason: "bad P6 dimensions or maxval".into() });
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(Error::Format {
                offset: pos,
                reason: "expected single whitespace before P6 payload".into(),
            })
        }
    }
    let (w, h) = (w as usize, h as usize);
    let need = w * h * 3;
    let body = &bytes[pos..];
    if body.len() < need {
        return Err(Error::Format {
            offset: pos + body.len(),
            reason: format!("truncated P6 payload: need {need} bytes, found {}", body.len()),
        });
    }
    let inv = 1.0 / f64::from(maxval);
    let data = body[..need]
        .chunks_exact(3)
        .map(|px| {
            let (r, g, b) = (f64::from(px[0]), f64::from(px[1]), f64::from(px[2]));
            ((0.299 * r + 0.587 * g + 0.114 * b) * inv).clamp(0.0, 1.0)
        })
        .collect();
    GrayImage::from_data(w, h, data)
}

/// Load a P5 (grayscale) or P6 (color, converted via BT.601 luma) image.
pub fn read_image(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path)?;
    match bytes.get(..2) {
        Some(b"P5") => load_pgm(&bytes),
        Some(b"P6") => parse_p6(&bytes),
        _ => Err(Error::Format {
            offset: 0,
            reason: format!("{}: unsupported magic (expected P5 or P6)", path.display()),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p6_luma_conversion() {
        // One pure-red, one pure-green, one pure-blue pixel.
        let mut bytes = b"P6\n3 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0, 0, 0, 255]);
        let g = parse_p6(&bytes).unwrap();
        assert!((g.data[0] - 0.299).abs() < 1e-9);
        assert!((g.data[1] - 0.587).abs() < 1e-9);
        assert!((g.data[2] - 0.114).abs() < 1e-9);
    }

    #[test]
    fn p6_rejects_truncation() {
        let bytes = b"P6\n2 2\n255\n\x00\x01".to_vec();
        assert!(parse_p6(&bytes).is_err());
    }
}
