//! `jsm` -- degrade, restore and benchmark images from the command line.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 numerical
//! failure inside the solver.

mod bench;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use jsm_restore::degrade::{
    adaptive_median_detect, add_gaussian_noise, add_salt_pepper, apply_mask, circular_convolve,
    derived_seed, make_kernel, make_random_mask, mask_from_image, KernelKind,
};
use jsm_restore::image::{load_image, psnr, save_image};
use jsm_restore::nlsm::{NlsmParams, ShrinkRule};
use jsm_restore::pipelines::{Task, AMF_MAX_WINDOW, TEXT_MASK_THRESHOLD};
use jsm_restore::solver::{default_params, run, DegradationOperator, Observation};
use jsm_restore::Error;

#[derive(Parser)]
#[command(
    name = "jsm",
    version,
    about = "Image restoration with joint local/nonlocal statistical modeling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply a synthetic degradation and report the damage.
    Degrade(DegradeArgs),
    /// Restore a degraded image given the degradation evidence.
    Restore(RestoreArgs),
    /// Run a bundled experiment suite over a directory of images.
    Bench(bench::BenchArgs),
    /// Print the PSNR between two images.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct DegradeArgs {
    /// Clean input image (PGM or PNG).
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Degraded output image.
    #[arg(long = "out", value_name = "PATH")]
    output: PathBuf,
    /// inpaint | text | deblur | mixed
    #[arg(long)]
    task: String,
    /// Fraction of retained samples (inpaint).
    #[arg(long)]
    ratio: Option<f64>,
    /// Mask image: bright = keep, dark = missing (text).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// uniform9 | uniform19 | gaussian25 | motion20 (deblur).
    #[arg(long)]
    kernel: Option<String>,
    /// Gaussian noise standard deviation (deblur, mixed).
    #[arg(long)]
    sigma: Option<f64>,
    /// Salt-and-pepper density (mixed).
    #[arg(long = "impulse-r")]
    impulse_r: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the generated mask (inpaint/mixed); defaults to
    /// the output path with a `_mask.pgm` suffix.
    #[arg(long = "mask-out")]
    mask_out: Option<PathBuf>,
}

#[derive(Args, Default)]
struct RestoreArgs {
    /// Degraded input image.
    #[arg(long = "in", value_name = "PATH")]
    input: Option<PathBuf>,
    /// Restored output image.
    #[arg(long = "out", value_name = "PATH")]
    output: Option<PathBuf>,
    /// Mask image path: evidence for masked degradations.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Kernel name: evidence for circular blur.
    #[arg(long)]
    kernel: Option<String>,
    /// Noise deviation of the observation (recorded in the summary).
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long = "mu-tilde")]
    mu_tilde: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    /// Ground truth for per-iteration PSNR telemetry.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    block: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long = "group-size")]
    group_size: Option<usize>,
    #[arg(long = "lsm-iters")]
    lsm_iters: Option<usize>,
    /// Stop early when the relative change of the iterate drops below
    /// this.
    #[arg(long)]
    tol: Option<f64>,
    /// sqrt2rho | rho
    #[arg(long)]
    shrink: Option<String>,
    /// Telemetry CSV path; defaults to `<out>_telemetry.csv`.
    #[arg(long)]
    telemetry: Option<PathBuf>,
    /// JSON summary path; defaults to `<out>_summary.json`.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Flat key=value file merged underneath the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Degrade(args) => cmd_degrade(args),
        Command::Restore(args) => cmd_restore(args),
        Command::Bench(args) => bench::cmd_bench(args),
        Command::Metrics(args) => cmd_metrics(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Read { .. } | Error::Write { .. } | Error::UnsupportedImage { .. } => 1,
        Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

fn usage(message: impl Into<String>) -> Error {
    Error::InvalidParameter(message.into())
}

/// `<path minus extension>` + suffix, in the same directory.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_degrade(args: DegradeArgs) -> Result<(), Error> {
    let task: Task = args.task.parse()?;
    let clean = load_image(&args.input)?;
    let mask_out = args
        .mask_out
        .unwrap_or_else(|| sibling(&args.output, "_mask.pgm"));

    let degraded = match task {
        Task::Inpaint => {
            let ratio = args
                .ratio
                .ok_or_else(|| usage("task inpaint requires --ratio"))?;
            let mask = make_random_mask(clean.width(), clean.height(), ratio, args.seed)?;
            let degraded = apply_mask(&clean, &mask)?;
            save_image(&mask.to_image(), &mask_out)?;
            degraded
        }
        Task::TextRemoval => {
            let mask_path = args
                .mask
                .ok_or_else(|| usage("task text requires --mask"))?;
            let mask = mask_from_image(&load_image(&mask_path)?, TEXT_MASK_THRESHOLD)?;
            apply_mask(&clean, &mask)?
        }
        Task::Deblur => {
            let kernel: KernelKind = args
                .kernel
                .as_deref()
                .ok_or_else(|| usage("task deblur requires --kernel"))?
                .parse()?;
            let sigma = args
                .sigma
                .ok_or_else(|| usage("task deblur requires --sigma"))?;
            add_gaussian_noise(&circular_convolve(&clean, &make_kernel(kernel)), sigma, args.seed)
        }
        Task::MixedNoise => {
            let sigma = args
                .sigma
                .ok_or_else(|| usage("task mixed requires --sigma"))?;
            let r = args
                .impulse_r
                .ok_or_else(|| usage("task mixed requires --impulse-r"))?;
            if !(0.0..1.0).contains(&r) {
                return Err(usage(format!("impulse density {r} outside [0,1)")));
            }
            let noisy = add_salt_pepper(
                &add_gaussian_noise(&clean, sigma, args.seed),
                r,
                derived_seed(args.seed, 1),
            );
            let detected = adaptive_median_detect(&noisy, AMF_MAX_WINDOW);
            save_image(&detected.to_image(), &mask_out)?;
            noisy
        }
    };

    save_image(&degraded, &args.output)?;
    let damage = psnr(&clean, &degraded.clamped(0.0, 255.0))?;
    println!("degraded psnr: {}", format_db(damage));
    Ok(())
}

fn cmd_restore(args: RestoreArgs) -> Result<(), Error> {
    let resolved = config::resolve(args)?;
    let y = load_image(&resolved.input)?;

    let op = match (&resolved.mask, &resolved.kernel) {
        (Some(mask_path), None) => {
            let mask = mask_from_image(&load_image(mask_path)?, TEXT_MASK_THRESHOLD)?;
            DegradationOperator::Mask(mask)
        }
        (None, Some(kernel)) => DegradationOperator::Blur(make_kernel(*kernel)),
        (None, None) => {
            return Err(usage("restore needs degradation evidence: --mask or --kernel"))
        }
        (Some(_), Some(_)) => return Err(usage("--mask and --kernel are mutually exclusive")),
    };

    let truth = resolved.truth.as_ref().map(load_image).transpose()?;
    let mut params = default_params(resolved.mu_tilde, resolved.iters, resolved.nlsm);
    params.lsm_inner_iters = resolved.lsm_iters;
    params.shrink = resolved.shrink;
    params.tol = resolved.tol;

    let started = std::time::Instant::now();
    let obs = Observation { y: y.clone(), op };
    let (restored, telemetry) = run(&obs, &params, truth.as_ref())?;
    let wall = started.elapsed().as_secs_f64();

    save_image(&restored, &resolved.output)?;
    let telemetry_path = resolved
        .telemetry
        .unwrap_or_else(|| sibling(&resolved.output, "_telemetry.csv"));
    std::fs::write(&telemetry_path, telemetry.to_csv()).map_err(|source| Error::Write {
        path: telemetry_path.clone(),
        source,
    })?;

    let psnr_restored = truth.as_ref().map(|t| psnr(t, &restored)).transpose()?;
    let psnr_degraded = truth
        .as_ref()
        .map(|t| psnr(t, &y.clamped(0.0, 255.0)))
        .transpose()?;
    let summary = serde_json::json!({
        "task": if resolved.kernel.is_some() { "deblur" } else { "inpaint" },
        "image": resolved.input.file_stem().map(|s| s.to_string_lossy().into_owned()),
        "params": {
            "mu_tilde": resolved.mu_tilde,
            "max_iters": resolved.iters,
            "kernel": resolved.kernel.map(|k| k.name()),
            "sigma": resolved.sigma,
        },
        "psnr_degraded": psnr_degraded,
        "psnr_restored": psnr_restored,
        "wall_seconds": wall,
    });
    let summary_path = resolved
        .summary
        .unwrap_or_else(|| sibling(&resolved.output, "_summary.json"));
    std::fs::write(&summary_path, summary.to_string() + "\n").map_err(|source| Error::Write {
        path: summary_path.clone(),
        source,
    })?;

    if let Some(p) = psnr_restored {
        println!("restored psnr: {}", format_db(p));
    }
    Ok(())
}

fn cmd_metrics(args: MetricsArgs) -> Result<(), Error> {
    let a = load_image(&args.a)?;
    let b = load_image(&args.b)?;
    println!("{}", format_db(psnr(&a, &b)?));
    Ok(())
}

fn format_db(value: f64) -> String {
    if value.is_infinite() {
        "inf".into()
    } else {
        format!("{value:.2}")
    }
}

/// Everything `restore` needs after flag/config merging.
pub(crate) struct ResolvedRestore {
    pub input: PathBuf,
    pub output: PathBuf,
    pub mask: Option<PathBuf>,
    pub kernel: Option<KernelKind>,
    pub sigma: Option<f64>,
    pub mu_tilde: f64,
    pub iters: usize,
    pub truth: Option<PathBuf>,
    pub nlsm: NlsmParams,
    pub lsm_iters: usize,
    pub tol: Option<f64>,
    pub shrink: ShrinkRule,
    pub telemetry: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}
