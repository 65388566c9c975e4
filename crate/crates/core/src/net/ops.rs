//! Layer primitives. Each forward has a matching backward that produces
//! exact gradients with respect to its inputs and parameters; every
//! accumulation runs in a fixed order so results are bit-reproducible.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `out[y][x] += w * src[y + dy][x + dx]` over the valid index range.
/// The inner loop is a contiguous fused multiply-add over row slices.
#[inline]
fn accumulate_shifted(
    out: &mut [f64],
    ow: usize,
    oh: usize,
    src: &[f64],
    sw: usize,
    sh: usize,
    wgt: f64,
    dy: isize,
    dx: isize,
) {
    let y_start = (-dy).max(0) as usize;
    let y_end = ((sh as isize - dy).min(oh as isize)).max(0) as usize;
    let x_start = (-dx).max(0) as usize;
    let x_end = ((sw as isize - dx).min(ow as isize)).max(0) as usize;
    if x_start >= x_end {
        return;
    }
    for y in y_start..y_end {
        let sy = (y as isize + dy) as usize;
        let sx = (x_start as isize + dx) as usize;
        let orow = &mut out[y * ow + x_start..y * ow + x_end];
        let srow = &src[sy * sw + sx..sy * sw + sx + (x_end - x_start)];
        for (o, s) in orow.iter_mut().zip(srow) {
            *o += wgt * s;
        }
    }
}

/// `sum over valid (y, x) of a[y][x] * b[y + dy][x + dx]`.
#[inline]
fn dot_shifted(
    a: &[f64],
    aw: usize,
    ah: usize,
    b: &[f64],
    bw: usize,
    bh: usize,
    dy: isize,
    dx: isize,
) -> f64 {
    let y_start = (-dy).max(0) as usize;
    let y_end = ((bh as isize - dy).min(ah as isize)).max(0) as usize;
    let x_start = (-dx).max(0) as usize;
    let x_end = ((bw as isize - dx).min(aw as isize)).max(0) as usize;
    if x_start >= x_end {
        return 0.0;
    }
    let mut acc = 0.0;
    for y in y_start..y_end {
        let by = (y as isize + dy) as usize;
        let bx = (x_start as isize + dx) as usize;
        let arow = &a[y * aw + x_start..y * aw + x_end];
        let brow = &b[by * bw + bx..by * bw + bx + (x_end - x_start)];
        acc += arow.iter().zip(brow).map(|(p, q)| p * q).sum::<f64>();
    }
    acc
}

/// 2-D cross-correlation with zero padding, stride 1.
/// `kernel` is `(out_c, in_c, kh, kw)`; with `pad = 1` and a 3x3 kernel the
/// spatial size is preserved.
pub fn conv2d(x: &Tensor, kernel: &Tensor, bias: &[f64], pad: usize) -> Result<Tensor> {
    let (n, in_c, h, w) = x.shape();
    let (out_c, kc, kh, kw) = kernel.shape();
    if kc != in_c {
        return Err(Error::Shape(format!(
            "conv2d: kernel expects {kc} input channels, tensor has {in_c}"
        )));
    }
    if bias.len() != out_c {
        return Err(Error::Shape(format!(
            "conv2d: {} bias values for {out_c} output channels",
            bias.len()
        )));
    }
    let oh = (h + 2 * pad).checked_sub(kh - 1).filter(|&v| v > 0).ok_or_else(|| {
        Error::Shape(format!("conv2d: kernel {kh}x{kw} too large for {h}x{w} input"))
    })?;
    let ow = (w + 2 * pad).checked_sub(kw - 1).filter(|&v| v > 0).ok_or_else(|| {
        Error::Shape(format!("conv2d: kernel {kh}x{kw} too large for {h}x{w} input"))
    })?;
    let mut out = Tensor::zeros(n, out_c, oh, ow);
    for ni in 0..n {
        for oc in 0..out_c {
            out.plane_mut(ni, oc).fill(bias[oc]);
            for ic in 0..in_c {
                let src = x.plane(ni, ic);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wgt = kernel.plane(oc, ic)[ky * kw + kx];
                        accumulate_shifted(
                            out.plane_mut(ni, oc),
                            ow,
                            oh,
                            src,
                            w,
                            h,
                            wgt,
                            ky as isize - pad as isize,
                            kx as isize - pad as isize,
                        );
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias, given the
/// gradient flowing into its output.
pub fn conv2d_backward(
    x: &Tensor,
    kernel: &Tensor,
    gout: &Tensor,
    pad: usize,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let (n, in_c, h, w) = x.shape();
    let (out_c, _, kh, kw) = kernel.shape();
    let (gn, gc, oh, ow) = gout.shape();
    if gn != n || gc != out_c {
        return Err(Error::Shape(format!(
            "conv2d_backward: upstream gradient {:?} mismatches input {:?}",
            gout.shape(),
            x.shape()
        )));
    }
    let mut dx = Tensor::zeros(n, in_c, h, w);
    let mut dk = Tensor::zeros(out_c, in_c, kh, kw);
    let mut db = vec![0.0; out_c];
    for ni in 0..n {
        for oc in 0..out_c {
            let g = gout.plane(ni, oc);
            db[oc] += g.iter().sum::<f64>();
            for ic in 0..in_c {
                let src = x.plane(ni, ic);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let dy = ky as isize - pad as isize;
                        let dxo = kx as isize - pad as isize;
                        let wgt = kernel.plane(oc, ic)[ky * kw + kx];
                        // dL/dx: scatter the upstream gradient back through
                        // the same shift, weighted by the kernel entry.
                        accumulate_shifted(dx.plane_mut(ni, ic), w, h, g, ow, oh, wgt, -dy, -dxo);
                        // dL/dw: correlation of upstream gradient with input.
                        dk.plane_mut(oc, ic)[ky * kw + kx] +=
                            dot_shifted(g, ow, oh, src, w, h, dy, dxo);
                    }
                }
            }
        }
    }
    Ok((dx, dk, db))
}

/// Elementwise `max(x, slope * x)`.
pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    let data = x.data.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
    Tensor { data, ..*x }
}

/// Backward of [`leaky_relu`]: passes the gradient where the pre-activation
/// was positive and scales it by `slope` otherwise (zero counts as the
/// negative side).
pub fn leaky_relu_backward(pre: &Tensor, gout: &Tensor, slope: f64) -> Tensor {
    debug_assert_eq!(pre.shape(), gout.shape());
    let data = pre
        .data
        .iter()
        .zip(&gout.data)
        .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
        .collect();
    Tensor { data, ..*pre }
}

/// 2x2 max pooling with stride 2. Returns the pooled tensor and, for each
/// output element, the flat index of its source element (ties break to the
/// first in a row-major scan of the window).
pub fn maxpool2(x: &Tensor) -> Result<(Tensor, Vec<u32>)> {
    let (n, c, h, w) = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("maxpool2: odd spatial dims {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(n, c, oh, ow);
    let mut argmax = vec![0u32; n * c * oh * ow];
    let mut oi = 0;
    for ni in 0..n {
        for ci in 0..c {
            let plane_base = (ni * c + ci) * h * w;
            let src = x.plane(ni, ci);
            let dst = out.plane_mut(ni, ci);
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let i = (2 * y + dy) * w + 2 * xo + dx;
                            if src[i] > best {
                                best = src[i];
                                best_i = i;
                            }
                        }
                    }
                    dst[y * ow + xo] = best;
                    argmax[oi] = (plane_base + best_i) as u32;
                    oi += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Backward of [`maxpool2`]: routes each upstream gradient to the recorded
/// argmax. `input_shape` is the shape of the pooled input.
pub fn maxpool2_backward(
    gout: &Tensor,
    argmax: &[u32],
    input_shape: (usize, usize, usize, usize),
) -> Tensor {
    let (n, c, h, w) = input_shape;
    let mut dx = Tensor::zeros(n, c, h, w);
    for (g, &i) in gout.data.iter().zip(argmax) {
        dx.data[i as usize] += g;
    }
    dx
}

/// Transposed convolution with a 2x2 kernel and stride 2: spatial dims
/// exactly double. `kernel` is `(in_c, out_c, 2, 2)`.
pub fn transpose_conv2(x: &Tensor, kernel: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let (n, in_c, h, w) = x.shape();
    let (kn, out_c, kh, kw) = kernel.shape();
    if kn != in_c {
        return Err(Error::Shape(format!(
            "transpose_conv2: kernel expects {kn} input channels, tensor has {in_c}"
        )));
    }
    if kh != 2 || kw != 2 {
        return Err(Error::Shape(format!("transpose_conv2: kernel must be 2x2, got {kh}x{kw}")));
    }
    if bias.len() != out_c {
        return Err(Error::Shape(format!(
            "transpose_conv2: {} bias values for {out_c} output channels",
            bias.len()
        )));
    }
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros(n, out_c, oh, ow);
    for ni in 0..n {
        for oc in 0..out_c {
            out.plane_mut(ni, oc).fill(bias[oc]);
            for ic in 0..in_c {
                let src = x.plane(ni, ic);
                let k = kernel.plane(ic, oc);
                for dy in 0..2usize {
                    for dx in 0..2usize {
                        let wgt = k[dy * 2 + dx];
                        let dst = out.plane_mut(ni, oc);
                        for y in 0..h {
                            let orow = (2 * y + dy) * ow + dx;
                            let srow = y * w;
                            for xo in 0..w {
                                dst[orow + 2 * xo] += wgt * src[srow + xo];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`transpose_conv2`] with respect to input, kernel and bias.
pub fn transpose_conv2_backward(
    x: &Tensor,
    kernel: &Tensor,
    gout: &Tensor,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let (n, in_c, h, w) = x.shape();
    let (_, out_c, _, _) = kernel.shape();
    let (gn, gc, oh, ow) = gout.shape();
    if gn != n || gc != out_c || oh != 2 * h || ow != 2 * w {
        return Err(Error::Shape(format!(
            "transpose_conv2_backward: upstream gradient {:?} mismatches input {:?}",
            gout.shape(),
            x.shape()
        )));
    }
    let mut dx = Tensor::zeros(n, in_c, h, w);
    let mut dk = Tensor::zeros(in_c, out_c, 2, 2);
    let mut db = vec![0.0; out_c];
    for ni in 0..n {
        for oc in 0..out_c {
            let g = gout.plane(ni, oc);
            db[oc] += g.iter().sum::<f64>();
            for ic in 0..in_c {
                let src = x.plane(ni, ic);
                let k = kernel.plane(ic, oc);
                let dxp = dx.plane_mut(ni, ic);
                for dy in 0..2usize {
                    for dxo in 0..2usize {
                        let wgt = k[dy * 2 + dxo];
                        let mut kgrad = 0.0;
                        for y in 0..h {
                            let orow = (2 * y + dy) * ow + dxo;
                            let srow = y * w;
                            for xo in 0..w {
                                let gv = g[orow + 2 * xo];
                                dxp[srow + xo] += wgt * gv;
                                kgrad += src[srow + xo] * gv;
                            }
                        }
                        dk.plane_mut(ic, oc)[dy * 2 + dxo] += kgrad;
                    }
                }
            }
        }
    }
    Ok((dx, dk, db))
}

/// Concatenate along the channel axis, `a`'s channels first.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.n != b.n || a.h != b.h || a.w != b.w {
        return Err(Error::Shape(format!(
            "concat_channels: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(a.n, a.c + b.c, a.h, a.w);
    for ni in 0..a.n {
        for ci in 0..a.c {
            out.plane_mut(ni, ci).copy_from_slice(a.plane(ni, ci));
        }
        for ci in 0..b.c {
            out.plane_mut(ni, a.c + ci).copy_from_slice(b.plane(ni, ci));
        }
    }
    Ok(out)
}

/// Backward of [`concat_channels`]: split the gradient back into the two
/// channel groups (`first_channels` went to `a`).
pub fn split_channels(g: &Tensor, first_channels: usize) -> (Tensor, Tensor) {
    debug_assert!(first_channels < g.c);
    let rest = g.c - first_channels;
    let mut ga = Tensor::zeros(g.n, first_channels, g.h, g.w);
    let mut gb = Tensor::zeros(g.n, rest, g.h, g.w);
    for ni in 0..g.n {
        for ci in 0..first_channels {
            ga.plane_mut(ni, ci).copy_from_slice(g.plane(ni, ci));
        }
        for ci in 0..rest {
            gb.plane_mut(ni, ci).copy_from_slice(g.plane(ni, first_channels + ci));
        }
    }
    (ga, gb)
}

/// Mean absolute difference and its gradient with respect to `pred`:
/// `sign(pred - target) / n`, with `sign(0) = 0`.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "l1_loss: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(pred.n, pred.c, pred.h, pred.w);
    for ((&p, &t), g) in pred.data.iter().zip(&target.data).zip(grad.data.iter_mut()) {
        let d = p - t;
        loss += d.abs();
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((loss / n, grad))
}
