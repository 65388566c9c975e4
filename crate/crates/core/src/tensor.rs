//! Minimal NCHW tensor: a shape plus a row-major `Vec<f64>`. All network
//! arithmetic runs in 64-bit floats.

use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        debug_assert!(n >= 1 && c >= 1 && h >= 1 && w >= 1);
        Self { n, c, h, w, data: vec![0.0; n * c * h * w] }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::Shape(format!(
                "tensor data length {} does not match {n}x{c}x{h}x{w}",
                data.len()
            )));
        }
        Ok(Self { n, c, h, w, data })
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    fn plane_offset(&self, n: usize, c: usize) -> usize {
        (n * self.c + c) * self.h * self.w
    }

    /// One `h*w` spatial plane.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let off = self.plane_offset(n, c);
        &self.data[off..off + self.h * self.w]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let off = self.plane_offset(n, c);
        let hw = self.h * self.w;
        &mut self.data[off..off + hw]
    }

    /// Elementwise sum with a tensor of identical shape.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor { data, ..*self })
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.data.iter_mut() {
            *v *= s;
        }
    }

    /// Clamp every element into `[lo, hi]`.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        let data = self.data.iter().map(|v| v.clamp(lo, hi)).collect();
        Tensor { data, ..*self }
    }

    /// Wrap a grayscale image as a 1x1xHxW tensor.
    pub fn from_gray(img: &GrayImage) -> Tensor {
        Tensor { n: 1, c: 1, h: img.height, w: img.width, data: img.data.clone() }
    }

    /// Unwrap a 1x1xHxW tensor into an image, clamping into `[0, 1]`.
    pub fn to_gray(&self) -> Result<GrayImage> {
        if self.n != 1 || self.c != 1 {
            return Err(Error::Shape(format!(
                "to_gray requires a 1x1xHxW tensor, got {:?}",
                self.shape()
            )));
        }
        let data = self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(GrayImage { width: self.w, height: self.h, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_layout() {
        let t = Tensor::from_vec(1, 2, 2, 2, (0..8).map(f64::from).collect()).unwrap();
        assert_eq!(t.plane(0, 0), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(t.plane(0, 1), &[4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn gray_roundtrip() {
        let img = GrayImage::from_data(3, 2, vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.1]).unwrap();
        let t = Tensor::from_gray(&img);
        assert_eq!(t.shape(), (1, 1, 2, 3));
        assert_eq!(t.to_gray().unwrap(), img);
    }

    #[test]
    fn shape_mismatch_errors() {
        let a = Tensor::zeros(1, 1, 2, 2);
        let b = Tensor::zeros(1, 1, 2, 3);
        assert!(a.add(&b).is_err());
        assert!(Tensor::from_vec(1, 1, 2, 2, vec![0.0; 3]).is_err());
    }
}
