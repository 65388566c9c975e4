//! Finite-difference verification of the analytic gradients.

use crate::error::Result;
use crate::tensor::Tensor;

use super::ops::l1_loss;
use super::unet::{unet_backward, unet_forward, UNetConfig, UNetParams};

/// Relative error between an analytic and a numeric gradient component.
/// Falls back to the absolute difference when both values are tiny, so
/// near-zero gradients do not produce spurious failures.
pub(crate) fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-6 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / denom
    }
}

fn chain_loss(params: &UNetParams, cfg: &UNetConfig, x: &Tensor, target: &Tensor) -> Result<f64> {
    let (residual, _) = unet_forward(params, cfg, x)?;
    let pred = residual.add(x)?;
    Ok(l1_loss(&pred, target)?.0)
}

/// Compare the analytic gradient of `L1(net(x) + x, target)` against central
/// finite differences `(L(theta + eps) - L(theta - eps)) / 2 eps` for every
/// parameter. Returns the worst relative error. Intended for networks small
/// enough that `2 * param_count` forward passes are cheap.
pub fn grad_check(
    params: &UNetParams,
    cfg: &UNetConfig,
    x: &Tensor,
    target: &Tensor,
    epsilon: f64,
) -> Result<f64> {
    let (residual, cache) = unet_forward(params, cfg, x)?;
    let pred = residual.add(x)?;
    let (_, dpred) = l1_loss(&pred, target)?;
    // d pred / d residual = identity, so the loss gradient flows unchanged.
    let (analytic, _) = unet_backward(params, cfg, &cache, &dpred)?;

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    let n_blocks = probe.blocks().len();
    for bi in 0..n_blocks {
        let block_len = probe.blocks()[bi].1.len();
        for i in 0..block_len {
            let original = probe.blocks()[bi].1[i];
            probe.blocks_mut()[bi].1[i] = original + epsilon;
            let plus = chain_loss(&probe, cfg, x, target)?;
            probe.blocks_mut()[bi].1[i] = original - epsilon;
            let minus = chain_loss(&probe, cfg, x, target)?;
            probe.blocks_mut()[bi].1[i] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.blocks()[bi].1[i];
            worst = worst.max(rel_error(a, numeric));
        }
    }
    Ok(worst)
}
