//! `inkworks` — document enhancement and binarization pipeline.
//!
//! Subcommands: `synth` (training corpus generation), `train` (fit a
//! refinement chain), `enhance` (run a trained chain over a page),
//! `binarize` (classical or enhancement-backed thresholding) and `evaluate`
//! (contest metrics).
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod config;
mod input;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use inkworks_core::image::save_pgm;
use inkworks_core::metrics::MetricsReport;
use inkworks_core::model::{load_chain_file, save_chain_file};
use inkworks_core::net::UNetConfig;
use inkworks_core::refine::{
    enhance_document, train_chain, EnhanceOptions, RefineMode, TrainConfig, DEFAULT_INK_FRACTION,
    DEFAULT_SCALES,
};
use inkworks_core::synth::{generate_corpus, load_corpus, load_pair_directory, CorpusMeta};
use inkworks_core::threshold::{
    binarize_global, histogram256, otsu_threshold, sauvola_binarize, BinaryMap, SauvolaParams,
};
use inkworks_core::Error as CoreError;

use config::{parse_scales, parse_widths, RunConfig};
use input::read_image;

#[derive(Parser)]
#[command(name = "inkworks", version, about = "Document image enhancement and binarization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic degraded-document training corpus.
    Synth(SynthArgs),
    /// Train a refinement chain on a corpus or page-pair directory.
    Train(TrainArgs),
    /// Enhance a document image with a trained model.
    Enhance(EnhanceArgs),
    /// Binarize an image, optionally enhancing it first.
    Binarize(BinarizeArgs),
    /// Evaluate a predicted binary map against ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output corpus directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of patches (default 2000).
    #[arg(long)]
    count: Option<usize>,
    /// Patch side length in pixels (default 64).
    #[arg(long)]
    patch_size: Option<usize>,
    /// Corpus seed (default 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Gaussian noise standard deviation override.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Bleed-through blend weight override.
    #[arg(long)]
    bleed_strength: Option<f64>,
    /// Background ramp amplitude override.
    #[arg(long)]
    gradient_amplitude: Option<f64>,
    /// Stain count override.
    #[arg(long)]
    stain_count: Option<u32>,
    /// key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus directory (with corpus.meta) or page-pair directory.
    #[arg(long)]
    data: PathBuf,
    /// Output model path.
    #[arg(long)]
    out: PathBuf,
    /// rr (recurrent) or sr (stacked). Default rr.
    #[arg(long)]
    mode: Option<String>,
    /// Iteration count m (default 3).
    #[arg(long)]
    m: Option<usize>,
    /// Optimizer steps (default 2000).
    #[arg(long)]
    steps: Option<usize>,
    /// Batch size (default 5).
    #[arg(long)]
    batch: Option<usize>,
    /// Learning rate (default 1e-4).
    #[arg(long)]
    lr: Option<f64>,
    /// Training seed (default 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Patch size for page-pair directories (default 64).
    #[arg(long)]
    patch_size: Option<usize>,
    /// Encoder widths, comma separated (default 8,16,32).
    #[arg(long)]
    widths: Option<String>,
    /// Clamp iterates into [0,1] between passes during training.
    #[arg(long)]
    clamp_iterates: bool,
    /// Cut gradient flow across every k-th iterate (0 = full backprop).
    #[arg(long)]
    detach_every: Option<usize>,
    /// Disable scale/rotation augmentation.
    #[arg(long)]
    no_augment: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct EnhanceFlags {
    /// Enhancement passes (default: the model's m).
    #[arg(long)]
    iterations: Option<usize>,
    /// Average enhancements over multiple patch scales.
    #[arg(long)]
    multiscale: bool,
    /// Average the per-iteration outputs instead of keeping the last.
    #[arg(long)]
    fusion: bool,
    /// Locally-uniform rescale of ink patches after enhancement.
    #[arg(long)]
    uniform: bool,
    /// Multiscale factors, comma separated (default 1.0,0.75,1.25,1.5).
    #[arg(long)]
    scales: Option<String>,
    /// Patch sampling stride (default: half the patch size).
    #[arg(long)]
    stride: Option<usize>,
    /// Sauvola window (odd, default 31).
    #[arg(long)]
    sauvola_window: Option<usize>,
    /// Sauvola k (default 0.5).
    #[arg(long)]
    sauvola_k: Option<f64>,
    /// Sauvola R (default 128).
    #[arg(long)]
    sauvola_r: Option<f64>,
    /// Ink-trace fraction for the uniform step (default 0.005).
    #[arg(long)]
    ink_fraction: Option<f64>,
}

#[derive(Args)]
struct EnhanceArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    /// Input image (PGM, or PPM converted to grayscale).
    #[arg(long)]
    input: PathBuf,
    /// Output enhanced PGM.
    #[arg(long)]
    output: PathBuf,
    /// Also write every iterate as OUTPUT.iterK.pgm.
    #[arg(long)]
    emit_iterates: bool,
    #[command(flatten)]
    flags: EnhanceFlags,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct BinarizeArgs {
    /// Input image (PGM, or PPM converted to grayscale).
    #[arg(long)]
    input: PathBuf,
    /// Output binary map PGM (text black, background white).
    #[arg(long)]
    output: PathBuf,
    /// otsu (global) or sauvola (local). Default otsu.
    #[arg(long)]
    method: Option<String>,
    /// Enhance with this model before thresholding.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Invert intensities first (light-on-dark sources).
    #[arg(long)]
    invert: bool,
    #[command(flatten)]
    flags: EnhanceFlags,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predicted binary map (PGM).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth binary map (PGM).
    #[arg(long)]
    gt: PathBuf,
    /// Also write the key=value report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Core(CoreError),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

type CliResult = Result<(), CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn init_threads(n: Option<usize>) -> CliResult {
    if let Some(n) = n {
        if n == 0 {
            return Err(usage("--threads must be >= 1"));
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> CliResult {
    let file = RunConfig::load(args.config.as_deref())?;
    let mut meta = CorpusMeta::default();
    meta.count = args.count.unwrap_or(meta.count);
    meta.patch_size = args.patch_size.or(file.patch_size).unwrap_or(meta.patch_size);
    meta.seed = args.seed.or(file.seed).unwrap_or(meta.seed);
    if let Some(v) = args.noise_sigma {
        meta.degradation.noise_sigma = v;
    }
    if let Some(v) = args.bleed_strength {
        meta.degradation.bleed_strength = v;
    }
    if let Some(v) = args.gradient_amplitude {
        meta.degradation.gradient_amplitude = v;
    }
    if let Some(v) = args.stain_count {
        meta.degradation.stain_count = v;
    }
    if meta.count == 0 {
        return Err(usage("count must be >= 1"));
    }
    if meta.patch_size < 16 {
        return Err(usage("patch_size must be >= 16"));
    }
    meta.degradation.validate().map_err(|e| usage(e.to_string()))?;
    generate_corpus(&args.out, &meta)?;
    println!("wrote {} patches to {}", meta.count, args.out.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let file = RunConfig::load(args.config.as_deref())?;
    init_threads(args.threads)?;

    let mode_str = args.mode.or(file.mode).unwrap_or_else(|| "rr".into());
    let mode = RefineMode::parse(&mode_str).map_err(|e| usage(e.to_string()))?;

    let widths = match (&args.widths, &file.widths) {
        (Some(s), _) => parse_widths(s).map_err(|e| usage(e.to_string()))?,
        (None, Some(w)) => w.clone(),
        (None, None) => UNetConfig::default().widths,
    };
    if let Some(d) = file.depth {
        if d != widths.len() {
            return Err(usage(format!("depth {d} conflicts with widths of length {}", widths.len())));
        }
    }
    let cfg = UNetConfig::with_widths(widths);
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let tc = TrainConfig {
        learning_rate: args.lr.or(file.lr).unwrap_or(1e-4),
        batch_size: args.batch.or(file.batch).unwrap_or(5),
        steps: args.steps.or(file.steps).unwrap_or(2000),
        m: args.m.or(file.m).unwrap_or(3),
        seed: args.seed.or(file.seed).unwrap_or(0),
        clamp_between_iterations: args.clamp_iterates,
        detach_every: args.detach_every.unwrap_or(0),
        augment: !args.no_augment,
    };
    if tc.m == 0 || tc.steps == 0 || tc.batch_size == 0 {
        return Err(usage("m, steps and batch must be >= 1"));
    }
    if !(tc.learning_rate.is_finite() && tc.learning_rate > 0.0) {
        return Err(usage("lr must be a positive number"));
    }

    let requested_patch = args.patch_size.or(file.patch_size);
    let (pairs, patch_size) = if args.data.join("corpus.meta").is_file() {
        let (meta, pairs) = load_corpus(&args.data)?;
        if let Some(p) = requested_patch {
            if p != meta.patch_size {
                return Err(usage(format!(
                    "corpus has patch_size {} but {p} was requested",
                    meta.patch_size
                )));
            }
        }
        (pairs, meta.patch_size)
    } else {
        let patch = requested_patch.unwrap_or(64);
        (load_pair_directory(&args.data, patch)?, patch)
    };
    cfg.check_input(patch_size, patch_size).map_err(|e| usage(e.to_string()))?;

    let (chain, history) = train_chain(&pairs, mode, &cfg, &tc, |e| {
        let iters: Vec<String> =
            e.per_iter.iter().enumerate().map(|(i, l)| format!("l{}={l:.6}", i + 1)).collect();
        println!("epoch={} steps={} l_total={:.6} {}", e.epoch, e.steps, e.l_total, iters.join(" "));
    })?;
    save_chain_file(&chain, patch_size, &args.out)?;
    if let Some(last) = history.epochs.last() {
        println!("final l_total={:.6}", last.l_total);
    }
    println!("model written to {}", args.out.display());
    Ok(())
}

struct ResolvedEnhance {
    options: EnhanceOptions,
    sauvola: SauvolaParams,
}

fn resolve_enhance(flags: &EnhanceFlags, file: &RunConfig, patch_size: usize) -> Result<ResolvedEnhance, CliError> {
    let sauvola = SauvolaParams {
        window: flags.sauvola_window.or(file.sauvola_window).unwrap_or(31),
        k: flags.sauvola_k.or(file.sauvola_k).unwrap_or(0.5),
        r: flags.sauvola_r.or(file.sauvola_r).unwrap_or(128.0),
    };
    if sauvola.window < 3 || sauvola.window % 2 == 0 {
        return Err(usage("sauvola window must be odd and >= 3"));
    }
    let scales = match (&flags.scales, &file.scales) {
        (Some(s), _) => parse_scales(s).map_err(|e| usage(e.to_string()))?,
        (None, Some(s)) => s.clone(),
        (None, None) => DEFAULT_SCALES.to_vec(),
    };
    let mut options = EnhanceOptions::new(patch_size);
    options.iterations = flags.iterations.or(file.m).unwrap_or(0);
    options.multiscale = flags.multiscale;
    options.fusion = flags.fusion;
    options.uniform = flags.uniform;
    options.scales = scales;
    options.stride = flags.stride.unwrap_or(0);
    options.sauvola = sauvola;
    options.ink_fraction = flags.ink_fraction.or(file.ink_fraction).unwrap_or(DEFAULT_INK_FRACTION);
    Ok(ResolvedEnhance { options, sauvola })
}

fn iterate_path(output: &Path, k: usize) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = output.extension().and_then(|s| s.to_str()).unwrap_or("pgm");
    output.with_file_name(format!("{stem}.iter{k}.{ext}"))
}

fn cmd_enhance(args: EnhanceArgs) -> CliResult {
    let file = RunConfig::load(args.config.as_deref())?;
    init_threads(args.threads)?;
    let (chain, patch_size) = load_chain_file(&args.model)?;
    let img = read_image(&args.input)?;
    let resolved = resolve_enhance(&args.flags, &file, patch_size)?;
    let outcome = enhance_document(&chain, &img, &resolved.options)?;
    for scale in &outcome.skipped_scales {
        eprintln!("warning: scale {scale} skipped (image too small)");
    }
    std::fs::write(&args.output, save_pgm(&outcome.image)).map_err(CoreError::from)?;
    if args.emit_iterates {
        for (k, page) in outcome.iterates.iter().enumerate() {
            let path = iterate_path(&args.output, k + 1);
            std::fs::write(&path, save_pgm(page)).map_err(CoreError::from)?;
        }
        println!(
            "wrote {} and {} iterates",
            args.output.display(),
            outcome.iterates.len()
        );
    } else {
        println!("wrote {}", args.output.display());
    }
    Ok(())
}

fn cmd_binarize(args: BinarizeArgs) -> CliResult {
    let file = RunConfig::load(args.config.as_deref())?;
    init_threads(args.threads)?;
    let method = args.method.clone().unwrap_or_else(|| "otsu".into());
    if method != "otsu" && method != "sauvola" {
        return Err(usage(format!("unknown method {method:?} (use otsu or sauvola)")));
    }
    let mut img = read_image(&args.input)?;
    if args.invert {
        for v in img.data.iter_mut() {
            *v = 1.0 - *v;
        }
    }
    let (working, sauvola) = match &args.model {
        Some(model_path) => {
            let (chain, patch_size) = load_chain_file(model_path)?;
            let resolved = resolve_enhance(&args.flags, &file, patch_size)?;
            let outcome = enhance_document(&chain, &img, &resolved.options)?;
            for scale in &outcome.skipped_scales {
                eprintln!("warning: scale {scale} skipped (image too small)");
            }
            (outcome.image, resolved.sauvola)
        }
        None => {
            let resolved = resolve_enhance(&args.flags, &file, 64)?;
            (img, resolved.sauvola)
        }
    };
    let map = match method.as_str() {
        "otsu" => {
            let t = otsu_threshold(&histogram256(&working))?;
            binarize_global(&working, t)
        }
        _ => sauvola_binarize(&working, &sauvola)?,
    };
    std::fs::write(&args.output, save_pgm(&map.to_gray())).map_err(CoreError::from)?;
    println!("wrote {}", args.output.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> CliResult {
    let pred_img = read_image(&args.pred)?;
    let gt_img = read_image(&args.gt)?;
    let pred = BinaryMap::from_gray(&pred_img);
    let gt = BinaryMap::from_gray(&gt_img);
    let report = MetricsReport::evaluate(&pred, &gt)?;
    print!("{}", report.to_kv());
    if let Some(path) = &args.report {
        std::fs::write(path, report.to_kv()).map_err(CoreError::from)?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Enhance(a) => cmd_enhance(a),
        Command::Binarize(a) => cmd_binarize(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            let code = match e {
                CoreError::Training { .. } | CoreError::NonFiniteGrad { .. } => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}
