//! Joint training of a refinement chain.
//!
//! The unrolled chain is optimized against the mean of the per-iteration L1
//! losses, every iterate compared to the same uniform ground truth, with
//! gradients flowing through the whole chain by default. Batch members are
//! processed in parallel but reduced in a fixed order, so a run is a pure
//! function of its inputs and seed.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::{
    adam_step, l1_loss, unet_backward, unet_forward, AdamParams, OptimState, UNetConfig,
    UNetParams,
};
use crate::rng::SplitMix64;
use crate::synth::{apply_augment, TrainPair, AUGMENT_VARIANTS};
use crate::tensor::Tensor;

use super::{RefineChain, RefineMode};

/// Training hyperparameters.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Chain length m.
    pub m: usize,
    pub seed: u64,
    /// Clamp iterates into [0, 1] before feeding them to the next pass.
    /// The loss always sees the raw, unclamped prediction.
    pub clamp_between_iterations: bool,
    /// Cut gradient flow across every k-th iterate (0 = backpropagate
    /// through the whole unrolled chain). `1` trains each iteration on a
    /// detached input, the "separate" training regime.
    pub detach_every: usize,
    /// Expand the dataset with the scale/rotation augmentation family.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 5,
            steps: 2000,
            m: 3,
            seed: 0,
            clamp_between_iterations: false,
            detach_every: 0,
            augment: true,
        }
    }
}

/// Loss summary of one epoch (or the trailing partial epoch).
#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    /// Optimizer steps included.
    pub steps: usize,
    /// Mean combined loss over the epoch.
    pub l_total: f64,
    /// Mean per-iteration losses L^1 .. L^m.
    pub per_iter: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Combined loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

struct SampleResult {
    grads: Vec<UNetParams>,
    l_total: f64,
    per_iter: Vec<f64>,
}

fn net_index(mode: RefineMode, iteration: usize) -> usize {
    match mode {
        RefineMode::Recurrent => 0,
        RefineMode::Stacked => iteration,
    }
}

/// Gradient of `clamp(x, 0, 1)`: passes inside the range (boundaries
/// included), blocks outside.
fn clamp_backward(pre: &Tensor, g: &Tensor) -> Tensor {
    let data = pre
        .data
        .iter()
        .zip(&g.data)
        .map(|(&v, &gv)| if (0.0..=1.0).contains(&v) { gv } else { 0.0 })
        .collect();
    Tensor { data, ..*pre }
}

/// Forward the chain on one sample and backpropagate the joint loss
/// `mean_i L1(x_i, target)` through the unrolled iterations.
fn sample_forward_backward(
    nets: &[UNetParams],
    cfg: &UNetConfig,
    mode: RefineMode,
    m: usize,
    x0: &Tensor,
    target: &Tensor,
    tc: &TrainConfig,
) -> Result<SampleResult> {
    let mut inputs = Vec::with_capacity(m);
    let mut outputs = Vec::with_capacity(m);
    let mut caches = Vec::with_capacity(m);
    let mut losses = Vec::with_capacity(m);

    let mut cur = x0.clone();
    for it in 1..=m {
        let net = &nets[net_index(mode, it - 1)];
        let (residual, cache) = unet_forward(net, cfg, &cur)?;
        let out = residual.add(&cur)?;
        let (loss, _) = l1_loss(&out, target)?;
        losses.push(loss);
        inputs.push(cur);
        caches.push(cache);
        cur = if tc.clamp_between_iterations && it < m { out.clamp(0.0, 1.0) } else { out.clone() };
        outputs.push(out);
    }
    let l_total = losses.iter().sum::<f64>() / m as f64;

    let inv_m = 1.0 / m as f64;
    let mut grads: Vec<UNetParams> = nets.iter().map(|_| UNetParams::zeros(cfg)).collect();
    let (_, mut gcur) = l1_loss(&outputs[m - 1], target)?;
    gcur.scale(inv_m);
    for it in (1..=m).rev() {
        let ni = net_index(mode, it - 1);
        let (pgrads, mut gin) = unet_backward(&nets[ni], cfg, &caches[it - 1], &gcur)?;
        grads[ni].add_assign(&pgrads);
        // Residual passthrough: x_it = net(input) + input.
        gin.add_assign(&gcur);
        if it == 1 {
            break;
        }
        let mut gprev = if tc.clamp_between_iterations {
            clamp_backward(&outputs[it - 2], &gin)
        } else {
            gin
        };
        if tc.detach_every > 0 && (it - 1) % tc.detach_every == 0 {
            gprev.scale(0.0);
        }
        let (_, mut gloss) = l1_loss(&outputs[it - 2], target)?;
        gloss.scale(inv_m);
        gprev.add_assign(&gloss);
        gcur = gprev;
    }
    drop(inputs);
    Ok(SampleResult { grads, l_total, per_iter: losses })
}

/// Train a refinement chain. Returns the chain and per-epoch loss history;
/// `progress` is called at every epoch boundary (and once for a trailing
/// partial epoch).
pub fn train_chain(
    pairs: &[TrainPair],
    mode: RefineMode,
    cfg: &UNetConfig,
    tc: &TrainConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<(RefineChain, TrainHistory)> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Argument("training corpus is empty".into()));
    }
    if tc.m == 0 {
        return Err(Error::Argument("m must be >= 1".into()));
    }
    if tc.batch_size == 0 || tc.steps == 0 {
        return Err(Error::Argument("batch_size and steps must be >= 1".into()));
    }
    let (pw, ph) = (pairs[0].degraded.width, pairs[0].degraded.height);
    cfg.check_input(ph, pw)?;
    for (i, p) in pairs.iter().enumerate() {
        if p.degraded.width != pw
            || p.degraded.height != ph
            || p.target.width != pw
            || p.target.height != ph
        {
            return Err(Error::Argument(format!(
                "training pair {i} has inconsistent dimensions"
            )));
        }
    }

    let mut master = SplitMix64::new(tc.seed);
    let net_count = match mode {
        RefineMode::Recurrent => 1,
        RefineMode::Stacked => tc.m,
    };
    let mut nets: Vec<UNetParams> =
        (0..net_count).map(|_| UNetParams::init(cfg, master.next_u64())).collect();
    let mut states: Vec<OptimState> = (0..net_count).map(|_| OptimState::new(cfg)).collect();
    let adam = AdamParams::with_lr(tc.learning_rate);

    let variants = if tc.augment { AUGMENT_VARIANTS } else { 1 };
    let n_samples = pairs.len() * variants;
    let steps_per_epoch = (n_samples / tc.batch_size).max(1);

    let materialize = |sample: usize| -> (Tensor, Tensor) {
        let pair = &pairs[sample / variants];
        let k = sample % variants;
        if k == 0 {
            (Tensor::from_gray(&pair.degraded), Tensor::from_gray(&pair.target))
        } else {
            (
                Tensor::from_gray(&apply_augment(&pair.degraded, k)),
                Tensor::from_gray(&apply_augment(&pair.target, k)),
            )
        }
    };

    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut epoch = 0usize;
    let mut cursor = 0usize;
    SplitMix64::new(master.next_u64()).shuffle(&mut order);

    let mut history = TrainHistory::default();
    let mut acc_steps = 0usize;
    let mut acc_total = 0.0;
    let mut acc_iter = vec![0.0; tc.m];
    let flush =
        |epoch: usize, acc_steps: &mut usize, acc_total: &mut f64, acc_iter: &mut Vec<f64>,
         history: &mut TrainHistory,
         progress: &mut dyn FnMut(&EpochStats)| {
            if *acc_steps == 0 {
                return;
            }
            let stats = EpochStats {
                epoch,
                steps: *acc_steps,
                l_total: *acc_total / *acc_steps as f64,
                per_iter: acc_iter.iter().map(|v| v / *acc_steps as f64).collect(),
            };
            progress(&stats);
            history.epochs.push(stats);
            *acc_steps = 0;
            *acc_total = 0.0;
            acc_iter.iter_mut().for_each(|v| *v = 0.0);
        };

    for step in 0..tc.steps {
        if cursor + tc.batch_size > n_samples {
            flush(epoch, &mut acc_steps, &mut acc_total, &mut acc_iter, &mut history, &mut progress);
            epoch += 1;
            cursor = 0;
            SplitMix64::new(master.next_u64()).shuffle(&mut order);
        }
        let batch: Vec<(Tensor, Tensor)> =
            order[cursor..cursor + tc.batch_size].iter().map(|&s| materialize(s)).collect();
        cursor += tc.batch_size;

        let results: Vec<Result<SampleResult>> = batch
            .par_iter()
            .map(|(x, t)| sample_forward_backward(&nets, cfg, mode, tc.m, x, t, tc))
            .collect();

        let mut batch_grads: Vec<UNetParams> =
            (0..net_count).map(|_| UNetParams::zeros(cfg)).collect();
        let mut batch_total = 0.0;
        let mut batch_iter = vec![0.0; tc.m];
        for r in results {
            let r = r?;
            for (acc, g) in batch_grads.iter_mut().zip(&r.grads) {
                acc.add_assign(g);
            }
            batch_total += r.l_total;
            for (a, l) in batch_iter.iter_mut().zip(&r.per_iter) {
                *a += l;
            }
        }
        let inv_b = 1.0 / tc.batch_size as f64;
        batch_total *= inv_b;
        if !batch_total.is_finite() {
            return Err(Error::Training { step, reason: format!("non-finite loss {batch_total}") });
        }
        for g in batch_grads.iter_mut() {
            g.scale(inv_b);
        }
        for ((net, grads), state) in nets.iter_mut().zip(&batch_grads).zip(states.iter_mut()) {
            adam_step(net, grads, state, &adam).map_err(|e| match e {
                Error::NonFiniteGrad { block } => Error::Training {
                    step,
                    reason: format!("non-finite gradient in {block}"),
                },
                other => other,
            })?;
        }

        history.step_losses.push(batch_total);
        acc_steps += 1;
        acc_total += batch_total;
        for (a, l) in acc_iter.iter_mut().zip(&batch_iter) {
            *a += l * inv_b;
        }
        let _ = steps_per_epoch;
    }
    flush(epoch, &mut acc_steps, &mut acc_total, &mut acc_iter, &mut history, &mut progress);

    let chain = RefineChain { mode, nets, m: tc.m, cfg: cfg.clone() };
    chain.validate()?;
    Ok((chain, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::GrayImage;
    use crate::net::grad_check;
    use crate::rng::SplitMix64;
    use crate::synth::{generate_item, CorpusMeta};

    fn tiny_corpus(n: usize, patch: usize, seed: u64) -> Vec<TrainPair> {
        let meta = CorpusMeta { count: n, patch_size: patch, seed, ..Default::default() };
        (0..n)
            .map(|i| {
                let (degraded, gt, _) = generate_item(&meta, i).unwrap();
                TrainPair { degraded, target: gt }
            })
            .collect()
    }

    fn tiny_config() -> UNetConfig {
        UNetConfig::with_widths(vec![4, 8])
    }

    #[test]
    fn perfect_corpus_keeps_zero_loss_structure() {
        // degraded == target: a zero-residual network is already optimal and
        // the joint loss starts at zero with zero gradients, so weights
        // remain exactly zero... but training starts from random init, so
        // instead verify the loss the trainer reports on such data is small
        // and decreasing is not required. Use a zero-init check directly:
        let cfg = tiny_config();
        let img = GrayImage::constant(16, 16, 0.5);
        let pair = TrainPair { degraded: img.clone(), target: img };
        let nets = vec![UNetParams::zeros(&cfg)];
        let x = Tensor::from_gray(&pair.degraded);
        let t = Tensor::from_gray(&pair.target);
        let r = sample_forward_backward(
            &nets,
            &cfg,
            RefineMode::Recurrent,
            3,
            &x,
            &t,
            &TrainConfig::default(),
        )
        .unwrap();
        assert_eq!(r.l_total, 0.0);
        for (_, block) in r.grads[0].blocks() {
            assert!(block.iter().all(|&g| g == 0.0));
        }
    }

    /// Finite-difference check of the full unrolled-chain gradient, both
    /// modes, including the recurrent case where one network accumulates
    /// gradient from every iteration.
    #[test]
    fn chain_gradients_match_finite_differences() {
        let cfg = tiny_config();
        let mut rng = SplitMix64::new(42);
        let x = Tensor::from_vec(1, 1, 8, 8, (0..64).map(|_| rng.next_f64()).collect()).unwrap();
        let t = Tensor::from_vec(1, 1, 8, 8, (0..64).map(|_| rng.next_f64()).collect()).unwrap();
        let tc = TrainConfig { m: 2, ..Default::default() };
        for mode in [RefineMode::Recurrent, RefineMode::Stacked] {
            let count = if mode == RefineMode::Recurrent { 1 } else { 2 };
            let nets: Vec<UNetParams> = (0..count)
                .map(|i| {
                    let mut p = UNetParams::init(&cfg, 100 + i as u64);
                    // Randomize the zero-initialized projection so gradient
                    // flows through the whole chain.
                    let mut prng = SplitMix64::new(900 + i as u64);
                    for v in p.proj.kernel.data.iter_mut() {
                        *v = prng.range_f64(-0.3, 0.3);
                    }
                    p
                })
                .collect();
            let analytic =
                sample_forward_backward(&nets, &cfg, mode, 2, &x, &t, &tc).unwrap();

            let loss_of = |nets: &[UNetParams]| -> f64 {
                let mut cur = x.clone();
                let mut total = 0.0;
                for it in 0..2 {
                    let (res, _) =
                        unet_forward(&nets[net_index(mode, it)], &cfg, &cur).unwrap();
                    cur = res.add(&cur).unwrap();
                    total += l1_loss(&cur, &t).unwrap().0;
                }
                total / 2.0
            };

            let eps = 1e-5;
            let mut worst = 0.0f64;
            for ni in 0..count {
                let n_blocks = nets[ni].blocks().len();
                for bi in 0..n_blocks {
                    let len = nets[ni].blocks()[bi].1.len();
                    // Probe a spread of parameters to keep the test quick.
                    let stride = (len / 13).max(1);
                    for i in (0..len).step_by(stride) {
                        let mut probe = nets.clone();
                        let orig = probe[ni].blocks()[bi].1[i];
                        probe[ni].blocks_mut()[bi].1[i] = orig + eps;
                        let lp = loss_of(&probe);
                        probe[ni].blocks_mut()[bi].1[i] = orig - eps;
                        let lm = loss_of(&probe);
                        let numeric = (lp - lm) / (2.0 * eps);
                        let a = analytic.grads[ni].blocks()[bi].1[i];
                        let denom = a.abs().max(numeric.abs());
                        let err =
                            if denom < 1e-6 { (a - numeric).abs() } else { (a - numeric).abs() / denom };
                        worst = worst.max(err);
                    }
                }
            }
            assert!(worst <= 1e-4, "{mode}: max relative error {worst}");
        }
    }

    #[test]
    fn detached_training_ignores_cross_iteration_flow() {
        let cfg = tiny_config();
        let mut rng = SplitMix64::new(5);
        let x = Tensor::from_vec(1, 1, 8, 8, (0..64).map(|_| rng.next_f64()).collect()).unwrap();
        let t = Tensor::from_vec(1, 1, 8, 8, (0..64).map(|_| rng.next_f64()).collect()).unwrap();
        let nets = vec![UNetParams::init(&cfg, 1), UNetParams::init(&cfg, 2)];
        let tc_full = TrainConfig { m: 2, ..Default::default() };
        let tc_detached = TrainConfig { m: 2, detach_every: 1, ..Default::default() };
        let full =
            sample_forward_backward(&nets, &cfg, RefineMode::Stacked, 2, &x, &t, &tc_full).unwrap();
        let detached =
            sample_forward_backward(&nets, &cfg, RefineMode::Stacked, 2, &x, &t, &tc_detached)
                .unwrap();
        // Net 2 sees the same upstream loss either way; net 1 loses the
        // contribution that flows back through net 2.
        assert_eq!(full.grads[1], detached.grads[1]);
        assert_ne!(full.grads[0], detached.grads[0]);
        // Losses are a forward-only quantity and agree.
        assert_eq!(full.l_total, detached.l_total);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let pairs = tiny_corpus(6, 16, 3);
        let cfg = tiny_config();
        let tc = TrainConfig { steps: 8, batch_size: 3, m: 2, seed: 17, ..Default::default() };
        let run = || {
            let (chain, history) =
                train_chain(&pairs, RefineMode::Stacked, &cfg, &tc, |_| {}).unwrap();
            (chain, history)
        };
        let (a, ha) = run();
        let (b, hb) = run();
        for (na, nb) in a.nets.iter().zip(&b.nets) {
            assert_eq!(na, nb);
        }
        assert_eq!(ha.epochs.len(), hb.epochs.len());
        for (ea, eb) in ha.epochs.iter().zip(&hb.epochs) {
            assert_eq!(ea.l_total.to_bits(), eb.l_total.to_bits());
        }
    }

    #[test]
    fn short_training_reduces_loss() {
        let pairs = tiny_corpus(24, 16, 11);
        let cfg = tiny_config();
        let tc = TrainConfig {
            steps: 120,
            batch_size: 5,
            m: 2,
            seed: 7,
            learning_rate: 1e-3,
            augment: false,
            ..Default::default()
        };
        let (_, history) = train_chain(&pairs, RefineMode::Recurrent, &cfg, &tc, |_| {}).unwrap();
        let first = history.epochs.first().unwrap().l_total;
        let last = history.epochs.last().unwrap().l_total;
        assert!(
            last < first,
            "loss did not decrease: first {first}, last {last}"
        );
    }

    #[test]
    fn rejects_empty_corpus_and_bad_dims() {
        let cfg = tiny_config();
        let tc = TrainConfig::default();
        assert!(matches!(
            train_chain(&[], RefineMode::Recurrent, &cfg, &tc, |_| {}),
            Err(Error::Argument(_))
        ));
        let odd = TrainPair {
            degraded: GrayImage::constant(15, 15, 0.5),
            target: GrayImage::constant(15, 15, 0.5),
        };
        assert!(train_chain(&[odd], RefineMode::Recurrent, &cfg, &tc, |_| {}).is_err());
    }

    #[test]
    fn micro_grad_check_still_passes_through_public_api() {
        // The chain trainer relies on the same backward path grad_check
        // verifies; keep them wired together.
        let cfg = tiny_config();
        let mut params = UNetParams::init(&cfg, 9);
        let mut rng = SplitMix64::new(10);
        for v in params.proj.kernel.data.iter_mut() {
            *v = rng.range_f64(-0.3, 0.3);
        }
        let x = Tensor::from_vec(1, 1, 8, 8, (0..64).map(|_| rng.next_f64()).collect()).unwrap();
        let t = Tensor::from_vec(1, 1, 8, 8, (0..64).map(|_| rng.next_f64()).collect()).unwrap();
        assert!(grad_check(&params, &cfg, &x, &t, 1e-5).unwrap() <= 1e-4);
    }
}
