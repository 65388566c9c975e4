// Temporary tuning harness: measures step time and desk-scale efficacy.
use std::time::Instant;

use inkworks_core::image::GrayImage;
use inkworks_core::metrics::{confusion, f_measure};
use inkworks_core::refine::{
    enhance_document, train_chain, EnhanceOptions, RefineMode, TrainConfig,
};
use inkworks_core::synth::{
    generate_item, make_uniform_gt, render_text_patch, synth_degrade, CorpusMeta, DegradationSpec,
    LabeledPatch, TrainPair,
};
use inkworks_core::net::UNetConfig;
use inkworks_core::threshold::otsu_binarize;

fn make_page(seed: u64, size: usize, deg: &DegradationSpec) -> (GrayImage, GrayImage, LabeledPatch) {
    let clean = render_text_patch(seed, size);
    let spec = DegradationSpec { seed: seed ^ 0xBEEF, ..deg.clone() };
    let degraded = synth_degrade(&clean, &spec).unwrap();
    // Tile-wise uniform reference at the training patch scale.
    let mut reference = GrayImage::constant(size, size, 0.0);
    let tile = 64;
    for ty in (0..size).step_by(tile) {
        for tx in (0..size).step_by(tile) {
            let img = degraded.crop(tx, ty, tile, tile);
            let mut labels = inkworks_core::threshold::BinaryMap::new(tile, tile);
            for y in 0..tile {
                for x in 0..tile {
                    labels.set(x, y, clean.labels.get(tx + x, ty + y));
                }
            }
            let uni = make_uniform_gt(&LabeledPatch { image: img, labels });
            for y in 0..tile {
                for x in 0..tile {
                    reference.set(tx + x, ty + y, uni.get(x, y));
                }
            }
        }
    }
    (degraded, reference, clean)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let count: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(300);
    let pages: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(8);

    let meta = CorpusMeta { count, patch_size: 64, seed: 1, ..Default::default() };
    let t0 = Instant::now();
    let pairs: Vec<TrainPair> = (0..count)
        .map(|i| {
            let (degraded, gt, _) = generate_item(&meta, i).unwrap();
            TrainPair { degraded, target: gt }
        })
        .collect();
    println!("corpus {count} items in {:.1?}", t0.elapsed());

    let cfg = UNetConfig::default();
    let tc = TrainConfig { steps, m: 3, seed: 2, ..Default::default() };
    let t0 = Instant::now();
    let (chain, history) = train_chain(&pairs, RefineMode::Stacked, &cfg, &tc, |e| {
        println!(
            "epoch {} steps {} l_total {:.5} per-iter {:?}",
            e.epoch,
            e.steps,
            e.l_total,
            e.per_iter.iter().map(|v| (v * 1e5).round() / 1e5).collect::<Vec<_>>()
        );
    })
    .unwrap();
    let dt = t0.elapsed();
    println!(
        "trained {steps} steps in {:.1?} ({:.0} ms/step); first {:.5} last {:.5}",
        dt,
        dt.as_secs_f64() * 1000.0 / steps as f64,
        history.epochs.first().unwrap().l_total,
        history.epochs.last().unwrap().l_total
    );
    let k = 50.min(history.step_losses.len() / 2);
    let initial: f64 = history.step_losses[..10].iter().sum::<f64>() / 10.0;
    let final_: f64 =
        history.step_losses[history.step_losses.len() - k..].iter().sum::<f64>() / k as f64;
    println!(
        "step-loss initial (first 10) {:.5}, final (last {k}) {:.5}, ratio {:.3}",
        initial,
        final_,
        final_ / initial
    );

    // Held-out pages.
    let mut fm_raw = 0.0;
    let mut fm_enh = 0.0;
    let mut fm_it1 = 0.0;
    let mut fm_it3 = 0.0;
    let mut l1_raw_u = 0.0;
    let mut l1_enh_u = 0.0;
    let mut l1_raw_c = 0.0;
    let mut l1_enh_c = 0.0;
    let t0 = Instant::now();
    for p in 0..pages {
        let (degraded, reference, clean) = make_page(0x9000 + p as u64, 256, &meta.degradation);
        let outcome = enhance_document(&chain, &degraded, &EnhanceOptions::new(64)).unwrap();
        let raw_map = otsu_binarize(&degraded).unwrap();
        let enh_map = otsu_binarize(&outcome.image).unwrap();
        fm_raw += f_measure(&confusion(&raw_map, &clean.labels).unwrap());
        fm_enh += f_measure(&confusion(&enh_map, &clean.labels).unwrap());
        let it1 = otsu_binarize(&outcome.iterates[0]).unwrap();
        let it3 = otsu_binarize(outcome.iterates.last().unwrap()).unwrap();
        fm_it1 += f_measure(&confusion(&it1, &clean.labels).unwrap());
        fm_it3 += f_measure(&confusion(&it3, &clean.labels).unwrap());
        l1_raw_u += degraded.l1_distance(&reference).unwrap();
        l1_enh_u += outcome.image.l1_distance(&reference).unwrap();
        l1_raw_c += degraded.l1_distance(&clean.image).unwrap();
        l1_enh_c += outcome.image.l1_distance(&clean.image).unwrap();
    }
    let n = pages as f64;
    println!("enhance+eval {pages} pages in {:.1?}", t0.elapsed());
    println!(
        "FM raw {:.2} -> enhanced {:.2} (gain {:+.2}); it1 {:.2} it3 {:.2}",
        fm_raw / n,
        fm_enh / n,
        (fm_enh - fm_raw) / n,
        fm_it1 / n,
        fm_it3 / n
    );
    println!(
        "L1 vs tile-uniform: raw {:.4} -> {:.4}; L1 vs clean render: raw {:.4} -> {:.4}",
        l1_raw_u / n,
        l1_enh_u / n,
        l1_raw_c / n,
        l1_enh_c / n
    );
}
