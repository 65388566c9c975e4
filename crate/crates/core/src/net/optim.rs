//! Adaptive-moment optimizer over the network's parameter blocks.

use crate::error::{Error, Result};

use super::unet::{UNetConfig, UNetParams};

#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment accumulators mirroring the parameter shapes, plus the
/// step counter.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub m: UNetParams,
    pub v: UNetParams,
    pub step: u64,
}

impl OptimState {
    pub fn new(cfg: &UNetConfig) -> Self {
        Self { m: UNetParams::zeros(cfg), v: UNetParams::zeros(cfg), step: 0 }
    }
}

/// One bias-corrected update. Rejects non-finite gradients, naming the
/// offending parameter block.
pub fn adam_step(
    params: &mut UNetParams,
    grads: &UNetParams,
    state: &mut OptimState,
    opt: &AdamParams,
) -> Result<()> {
    for (name, block) in grads.blocks() {
        if block.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGrad { block: name });
        }
    }
    state.step += 1;
    let bc1 = 1.0 - opt.beta1.powi(state.step as i32);
    let bc2 = 1.0 - opt.beta2.powi(state.step as i32);
    let mut m_blocks = state.m.blocks_mut();
    let mut v_blocks = state.v.blocks_mut();
    for (((_, p), (_, g)), ((_, m), (_, v))) in params
        .blocks_mut()
        .into_iter()
        .zip(grads.blocks())
        .zip(m_blocks.iter_mut().zip(v_blocks.iter_mut()))
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro() -> (UNetConfig, UNetParams, OptimState) {
        let cfg = UNetConfig::with_widths(vec![2]);
        let p = UNetParams::init(&cfg, 3);
        let s = OptimState::new(&cfg);
        (cfg, p, s)
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (cfg, mut p, mut s) = micro();
        let before = p.clone();
        let grads = UNetParams::zeros(&cfg);
        adam_step(&mut p, &grads, &mut s, &AdamParams::with_lr(1e-4)).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let (cfg, mut p, mut s) = micro();
        let before = p.clone();
        let mut grads = UNetParams::zeros(&cfg);
        grads.proj.bias[0] = 2.5;
        let lr = 1e-3;
        adam_step(&mut p, &grads, &mut s, &AdamParams::with_lr(lr)).unwrap();
        let delta = p.proj.bias[0] - before.proj.bias[0];
        // Bias correction makes the first step ~ -lr * sign(g).
        assert!((delta + lr).abs() < lr * 1e-6, "delta {delta}");
    }

    #[test]
    fn updates_are_deterministic() {
        let (cfg, p0, s0) = micro();
        let mut grads = UNetParams::zeros(&cfg);
        for (_, block) in grads.blocks_mut() {
            for (i, v) in block.iter_mut().enumerate() {
                *v = (i as f64 - 3.0) * 0.01;
            }
        }
        let run = || {
            let mut p = p0.clone();
            let mut s = s0.clone();
            for _ in 0..10 {
                adam_step(&mut p, &grads, &mut s, &AdamParams::with_lr(1e-4)).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let (cfg, mut p, mut s) = micro();
        let mut grads = UNetParams::zeros(&cfg);
        grads.enc[0].kernel.data[0] = f64::NAN;
        match adam_step(&mut p, &grads, &mut s, &AdamParams::with_lr(1e-4)) {
            Err(Error::NonFiniteGrad { block }) => assert_eq!(block, "enc0.kernel"),
            other => panic!("expected NonFiniteGrad, got {other:?}"),
        }
    }
}
