//! Encoder-decoder network with skip connections.
//!
//! Contracting path: per level one 3x3 convolution + leaky-ReLU, followed by
//! 2x2 max pooling on all but the deepest level. Expansive path: a 2x2
//! stride-2 transposed convolution, concatenation with the matching
//! contracting feature map (skip first), then one 3x3 convolution +
//! leaky-ReLU. A final linear 3x3 convolution projects to the output
//! channels, so the result is a signed residual with the input's shape.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

use super::ops::{
    concat_channels, conv2d, conv2d_backward, leaky_relu, leaky_relu_backward, maxpool2,
    maxpool2_backward, split_channels, transpose_conv2, transpose_conv2_backward,
};

/// Network hyper-structure. `widths[i]` is the channel count of encoder
/// level `i`; spatial dims of the input must be divisible by
/// `2^(depth - 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct UNetConfig {
    pub depth: usize,
    pub widths: Vec<usize>,
    /// Convolution kernel size; fixed at 3.
    pub kernel: usize,
    pub leaky_slope: f64,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Default for UNetConfig {
    /// Desk-scale default: depth 3, widths [8, 16, 32].
    fn default() -> Self {
        Self::with_widths(vec![8, 16, 32])
    }
}

impl UNetConfig {
    pub fn with_widths(widths: Vec<usize>) -> Self {
        Self {
            depth: widths.len(),
            widths,
            kernel: 3,
            leaky_slope: 0.25,
            in_channels: 1,
            out_channels: 1,
        }
    }

    /// The full-scale layout: five levels, widths [16, 32, 64, 128, 256].
    pub fn full_scale() -> Self {
        Self::with_widths(vec![16, 32, 64, 128, 256])
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.widths.len() != self.depth {
            return Err(Error::Argument(format!(
                "config: widths length {} must equal depth {}",
                self.widths.len(),
                self.depth
            )));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Argument("config: zero channel width".into()));
        }
        if self.kernel != 3 {
            return Err(Error::Argument(format!("config: kernel must be 3, got {}", self.kernel)));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Argument("config: zero channel count".into()));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::Argument("config: non-finite leaky slope".into()));
        }
        Ok(())
    }

    /// Spatial divisibility requirement for inputs.
    pub fn divisor(&self) -> usize {
        1 << (self.depth - 1)
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let d = self.divisor();
        if h % d != 0 || w % d != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} not divisible by {d} (depth {})",
                self.depth
            )));
        }
        Ok(())
    }
}

/// Damping applied to the final projection at initialization.
const PROJ_INIT_SCALE: f64 = 0.05;

/// One convolution's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub kernel: Tensor,
    pub bias: Vec<f64>,
}

impl ConvBlock {
    fn zeros(out_c: usize, in_c: usize, kh: usize, kw: usize) -> Self {
        Self { kernel: Tensor::zeros(out_c, in_c, kh, kw), bias: vec![0.0; out_c] }
    }

    /// Fan-in-scaled uniform init, biases zero.
    fn he_uniform(out_c: usize, in_c: usize, kh: usize, kw: usize, rng: &mut SplitMix64) -> Self {
        let fan_in = (in_c * kh * kw) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let data = (0..out_c * in_c * kh * kw)
            .map(|_| rng.range_f64(-bound, bound))
            .collect();
        Self {
            kernel: Tensor::from_vec(out_c, in_c, kh, kw, data).expect("shape"),
            bias: vec![0.0; out_c],
        }
    }
}

/// All parameters of one network. Transposed-convolution kernels are stored
/// `(in_c, out_c, 2, 2)`; everything else `(out_c, in_c, 3, 3)`.
#[derive(Clone, Debug, PartialEq)]
pub struct UNetParams {
    /// Contracting-path convolutions, one per level (the last is the bottom).
    pub enc: Vec<ConvBlock>,
    /// Upsampling transposed convolutions, `up[i]` maps level i+1 -> i.
    pub up: Vec<ConvBlock>,
    /// Post-concat convolutions of the expansive path.
    pub dec: Vec<ConvBlock>,
    /// Final linear projection to the output channels.
    pub proj: ConvBlock,
}

impl UNetParams {
    fn build(cfg: &UNetConfig, mut make: impl FnMut(usize, usize, usize, usize) -> ConvBlock) -> Self {
        let w = &cfg.widths;
        let d = cfg.depth;
        let enc = (0..d)
            .map(|i| {
                let in_c = if i == 0 { cfg.in_channels } else { w[i - 1] };
                make(w[i], in_c, 3, 3)
            })
            .collect();
        // Transposed conv kernels are (in_c, out_c, 2, 2).
        let up = (0..d.saturating_sub(1)).map(|i| make(w[i + 1], w[i], 2, 2)).collect();
        let dec = (0..d.saturating_sub(1)).map(|i| make(w[i], 2 * w[i], 3, 3)).collect();
        let proj = make(cfg.out_channels, w[0], 3, 3);
        Self { enc, up, dec, proj }
    }

    /// All-zero parameters: the network computes a zero residual.
    pub fn zeros(cfg: &UNetConfig) -> Self {
        Self::build(cfg, |a, b, kh, kw| {
            if kh == 2 {
                ConvBlock::zeros(b, a, kh, kw).transposed_layout(a, b)
            } else {
                ConvBlock::zeros(a, b, kh, kw)
            }
        })
    }

    /// Seeded fan-in-scaled uniform initialization. The final projection is
    /// damped by [`PROJ_INIT_SCALE`] so a fresh chain starts near the
    /// identity: tiny residuals cannot compound across iterations, yet
    /// gradient still flows into every layer from the first step.
    pub fn init(cfg: &UNetConfig, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut params = Self::build(cfg, |a, b, kh, kw| {
            if kh == 2 {
                // (in_c=a, out_c=b) layout for transposed convs; fan-in is
                // per output pixel: each output sees one input pixel per
                // input channel.
                let fan_in = a as f64;
                let bound = (6.0 / fan_in).sqrt();
                let data = (0..a * b * kh * kw).map(|_| rng.range_f64(-bound, bound)).collect();
                ConvBlock {
                    kernel: Tensor::from_vec(a, b, kh, kw, data).expect("shape"),
                    bias: vec![0.0; b],
                }
            } else {
                ConvBlock::he_uniform(a, b, kh, kw, &mut rng)
            }
        });
        params.proj.kernel.scale(PROJ_INIT_SCALE);
        params
    }

    /// Named parameter blocks in canonical (serialization) order.
    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (i, b) in self.enc.iter().enumerate() {
            out.push((format!("enc{i}.kernel"), b.kernel.data.as_slice()));
            out.push((format!("enc{i}.bias"), b.bias.as_slice()));
        }
        for (i, b) in self.up.iter().enumerate() {
            out.push((format!("up{i}.kernel"), b.kernel.data.as_slice()));
            out.push((format!("up{i}.bias"), b.bias.as_slice()));
        }
        for (i, b) in self.dec.iter().enumerate() {
            out.push((format!("dec{i}.kernel"), b.kernel.data.as_slice()));
            out.push((format!("dec{i}.bias"), b.bias.as_slice()));
        }
        out.push(("proj.kernel".into(), self.proj.kernel.data.as_slice()));
        out.push(("proj.bias".into(), self.proj.bias.as_slice()));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (i, b) in self.enc.iter_mut().enumerate() {
            out.push((format!("enc{i}.kernel"), b.kernel.data.as_mut_slice()));
            out.push((format!("enc{i}.bias"), b.bias.as_mut_slice()));
        }
        for (i, b) in self.up.iter_mut().enumerate() {
            out.push((format!("up{i}.kernel"), b.kernel.data.as_mut_slice()));
            out.push((format!("up{i}.bias"), b.bias.as_mut_slice()));
        }
        for (i, b) in self.dec.iter_mut().enumerate() {
            out.push((format!("dec{i}.kernel"), b.kernel.data.as_mut_slice()));
            out.push((format!("dec{i}.bias"), b.bias.as_mut_slice()));
        }
        out.push(("proj.kernel".into(), self.proj.kernel.data.as_mut_slice()));
        out.push(("proj.bias".into(), self.proj.bias.as_mut_slice()));
        out
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|(_, s)| s.len()).sum()
    }

    /// Elementwise accumulate another parameter set (used for gradient sums).
    pub fn add_assign(&mut self, other: &UNetParams) {
        for ((_, a), (_, b)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, block) in self.blocks_mut() {
            for v in block {
                *v *= s;
            }
        }
    }
}

impl ConvBlock {
    /// Reinterpret a zero block with the transposed-conv kernel layout.
    fn transposed_layout(self, in_c: usize, out_c: usize) -> ConvBlock {
        ConvBlock { kernel: Tensor::zeros(in_c, out_c, 2, 2), bias: vec![0.0; out_c] }
    }
}

/// Intermediate activations retained for the backward pass.
pub struct UNetCache {
    enc_in: Vec<Tensor>,
    enc_pre: Vec<Tensor>,
    pool_idx: Vec<Vec<u32>>,
    pool_in_shape: Vec<(usize, usize, usize, usize)>,
    up_in: Vec<Tensor>,
    dec_in: Vec<Tensor>,
    dec_pre: Vec<Tensor>,
    proj_in: Tensor,
}

/// Forward pass. Returns the signed residual (same shape as `x`) and the
/// cache needed for an exact backward pass.
pub fn unet_forward(p: &UNetParams, cfg: &UNetConfig, x: &Tensor) -> Result<(Tensor, UNetCache)> {
    cfg.validate()?;
    cfg.check_input(x.h, x.w)?;
    if x.c != cfg.in_channels {
        return Err(Error::Shape(format!(
            "input has {} channels, config expects {}",
            x.c, cfg.in_channels
        )));
    }
    let d = cfg.depth;
    let slope = cfg.leaky_slope;
    let mut enc_in = Vec::with_capacity(d);
    let mut enc_pre = Vec::with_capacity(d);
    let mut pool_idx = Vec::with_capacity(d - 1);
    let mut pool_in_shape = Vec::with_capacity(d - 1);
    let mut skips = Vec::with_capacity(d - 1);

    let mut cur = x.clone();
    for i in 0..d {
        enc_in.push(cur.clone());
        let pre = conv2d(&cur, &p.enc[i].kernel, &p.enc[i].bias, 1)?;
        let act = leaky_relu(&pre, slope);
        enc_pre.push(pre);
        if i + 1 < d {
            pool_in_shape.push(act.shape());
            let (pooled, idx) = maxpool2(&act)?;
            skips.push(act);
            pool_idx.push(idx);
            cur = pooled;
        } else {
            cur = act;
        }
    }

    let mut up_in = vec![Tensor::zeros(1, 1, 1, 1); d.saturating_sub(1)];
    let mut dec_in = vec![Tensor::zeros(1, 1, 1, 1); d.saturating_sub(1)];
    let mut dec_pre = vec![Tensor::zeros(1, 1, 1, 1); d.saturating_sub(1)];
    for i in (0..d.saturating_sub(1)).rev() {
        up_in[i] = cur.clone();
        let upsampled = transpose_conv2(&cur, &p.up[i].kernel, &p.up[i].bias)?;
        let cat = concat_channels(&skips[i], &upsampled)?;
        dec_in[i] = cat.clone();
        let pre = conv2d(&cat, &p.dec[i].kernel, &p.dec[i].bias, 1)?;
        cur = leaky_relu(&pre, slope);
        dec_pre[i] = pre;
    }

    let proj_in = cur;
    let residual = conv2d(&proj_in, &p.proj.kernel, &p.proj.bias, 1)?;
    Ok((
        residual,
        UNetCache { enc_in, enc_pre, pool_idx, pool_in_shape, up_in, dec_in, dec_pre, proj_in },
    ))
}

/// Backward pass: gradients for every parameter and for the input, given the
/// gradient flowing into the residual output.
pub fn unet_backward(
    p: &UNetParams,
    cfg: &UNetConfig,
    cache: &UNetCache,
    gout: &Tensor,
) -> Result<(UNetParams, Tensor)> {
    let d = cfg.depth;
    let slope = cfg.leaky_slope;
    let mut grads = UNetParams::zeros(cfg);

    let (mut g, dk, db) = conv2d_backward(&cache.proj_in, &p.proj.kernel, gout, 1)?;
    grads.proj.kernel.add_assign(&dk);
    for (a, b) in grads.proj.bias.iter_mut().zip(&db) {
        *a += b;
    }

    // Expansive path in reverse (levels ascending, since the forward walked
    // them descending).
    let mut skip_grads: Vec<Option<Tensor>> = vec![None; d.saturating_sub(1)];
    for i in 0..d.saturating_sub(1) {
        let g_pre = leaky_relu_backward(&cache.dec_pre[i], &g, slope);
        let (g_cat, dk, db) = conv2d_backward(&cache.dec_in[i], &p.dec[i].kernel, &g_pre, 1)?;
        grads.dec[i].kernel.add_assign(&dk);
        for (a, b) in grads.dec[i].bias.iter_mut().zip(&db) {
            *a += b;
        }
        let (g_skip, g_up) = split_channels(&g_cat, cfg.widths[i]);
        skip_grads[i] = Some(g_skip);
        let (g_up_in, dk, db) = transpose_conv2_backward(&cache.up_in[i], &p.up[i].kernel, &g_up)?;
        grads.up[i].kernel.add_assign(&dk);
        for (a, b) in grads.up[i].bias.iter_mut().zip(&db) {
            *a += b;
        }
        g = g_up_in;
    }

    // Bottom level.
    let g_pre = leaky_relu_backward(&cache.enc_pre[d - 1], &g, slope);
    let (mut g, dk, db) = conv2d_backward(&cache.enc_in[d - 1], &p.enc[d - 1].kernel, &g_pre, 1)?;
    grads.enc[d - 1].kernel.add_assign(&dk);
    for (a, b) in grads.enc[d - 1].bias.iter_mut().zip(&db) {
        *a += b;
    }

    // Contracting path in reverse. Each level's activation fed both the pool
    // and the skip connection, so their gradients sum.
    for i in (0..d.saturating_sub(1)).rev() {
        let mut g_act = maxpool2_backward(&g, &cache.pool_idx[i], cache.pool_in_shape[i]);
        if let Some(gs) = &skip_grads[i] {
            g_act.add_assign(gs);
        }
        let g_pre = leaky_relu_backward(&cache.enc_pre[i], &g_act, slope);
        let (g_in, dk, db) = conv2d_backward(&cache.enc_in[i], &p.enc[i].kernel, &g_pre, 1)?;
        grads.enc[i].kernel.add_assign(&dk);
        for (a, b) in grads.enc[i].bias.iter_mut().zip(&db) {
            *a += b;
        }
        g = g_in;
    }

    Ok((grads, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn zero_params_give_zero_residual() {
        let cfg = UNetConfig::default();
        let p = UNetParams::zeros(&cfg);
        let mut rng = SplitMix64::new(2);
        let data = (0..64 * 64).map(|_| rng.next_f64()).collect();
        let x = Tensor::from_vec(1, 1, 64, 64, data).unwrap();
        let (res, _) = unet_forward(&p, &cfg, &x).unwrap();
        assert!(res.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_matches_input() {
        let cfg = UNetConfig::default();
        let p = UNetParams::init(&cfg, 5);
        let x = Tensor::zeros(1, 1, 64, 64);
        let (res, _) = unet_forward(&p, &cfg, &x).unwrap();
        assert_eq!(res.shape(), x.shape());
    }

    #[test]
    fn rejects_non_divisible_input() {
        let cfg = UNetConfig::default();
        let p = UNetParams::zeros(&cfg);
        let x = Tensor::zeros(1, 1, 30, 64);
        assert!(matches!(unet_forward(&p, &cfg, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = UNetConfig::default();
        assert_eq!(UNetParams::init(&cfg, 9), UNetParams::init(&cfg, 9));
        assert_ne!(UNetParams::init(&cfg, 9), UNetParams::init(&cfg, 10));
    }

    #[test]
    fn micro_param_count() {
        let cfg = UNetConfig::with_widths(vec![4, 8]);
        let p = UNetParams::zeros(&cfg);
        // enc0 1->4 (40), enc1 4->8 (296), up 8->4 (132), dec 8->4 (292),
        // proj 4->1 (37)
        assert_eq!(p.param_count(), 40 + 296 + 132 + 292 + 37);
    }

    #[test]
    fn blocks_cover_all_params_in_stable_order() {
        let cfg = UNetConfig::with_widths(vec![4, 8]);
        let p = UNetParams::zeros(&cfg);
        let names: Vec<String> = p.blocks().into_iter().map(|(n, _)| n).collect();
        assert_eq!(
            names,
            vec![
                "enc0.kernel",
                "enc0.bias",
                "enc1.kernel",
                "enc1.bias",
                "up0.kernel",
                "up0.bias",
                "dec0.kernel",
                "dec0.bias",
                "proj.kernel",
                "proj.bias"
            ]
        );
    }
}
