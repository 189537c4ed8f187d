//! End-to-end experiments: random-sample inpainting, text removal,
//! non-blind deblurring and mixed Gaussian plus salt-and-pepper noise
//! removal. Each run degrades a clean input deterministically, restores
//! it and reports PSNR against the original.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::degrade::{
    adaptive_median_detect, add_gaussian_noise, add_salt_pepper, apply_mask, circular_convolve,
    derived_seed, make_kernel, make_random_mask, mask_from_image, KernelKind, PixelMask,
};
use crate::error::{Error, Result};
use crate::image::{load_image, psnr, save_image, ImageBuffer};
use crate::nlsm::{NlsmParams, ShrinkRule};
use crate::solver::{default_params, run, DegradationOperator, Observation, SolverParams, Telemetry};

/// Window cap for the adaptive median detector; at impulse densities up
/// to one half the window saturates well below this.
pub const AMF_MAX_WINDOW: usize = 39;

/// Threshold separating text strokes from background in mask images.
pub const TEXT_MASK_THRESHOLD: f64 = 128.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Inpaint,
    TextRemoval,
    Deblur,
    MixedNoise,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Inpaint => "inpaint",
            Task::TextRemoval => "text",
            Task::Deblur => "deblur",
            Task::MixedNoise => "mixed",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inpaint" => Ok(Task::Inpaint),
            "text" => Ok(Task::TextRemoval),
            "deblur" => Ok(Task::Deblur),
            "mixed" => Ok(Task::MixedNoise),
            other => Err(Error::InvalidParameter(format!(
                "unknown task `{other}` (expected inpaint | text | deblur | mixed)"
            ))),
        }
    }
}

/// Everything one experiment needs; which optional fields are required
/// depends on the task.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub task: Task,
    pub input: PathBuf,
    /// Fraction of retained samples (inpaint).
    pub ratio: Option<f64>,
    /// Mask image path (text removal).
    pub mask_path: Option<PathBuf>,
    /// Blur kernel (deblur).
    pub kernel: Option<KernelKind>,
    /// Gaussian noise deviation (deblur, mixed).
    pub sigma: Option<f64>,
    /// Salt-and-pepper density (mixed).
    pub impulse_r: Option<f64>,
    pub seed: u64,
    pub mu_tilde: f64,
    pub max_iters: usize,
    pub nlsm: NlsmParams,
    pub lsm_inner_iters: usize,
    pub shrink: ShrinkRule,
    pub tol: Option<f64>,
}

impl ExperimentSpec {
    pub fn new(task: Task, input: impl Into<PathBuf>, mu_tilde: f64, max_iters: usize) -> Self {
        Self {
            task,
            input: input.into(),
            ratio: None,
            mask_path: None,
            kernel: None,
            sigma: None,
            impulse_r: None,
            seed: 0,
            mu_tilde,
            max_iters,
            nlsm: NlsmParams::default(),
            lsm_inner_iters: 10,
            shrink: ShrinkRule::default(),
            tol: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let missing = |flag: &str| {
            Err(Error::InvalidParameter(format!(
                "task {} requires {flag}",
                self.task.name()
            )))
        };
        match self.task {
            Task::Inpaint => {
                if self.ratio.is_none() {
                    return missing("a sampling ratio");
                }
            }
            Task::TextRemoval => {
                if self.mask_path.is_none() {
                    return missing("a mask image");
                }
            }
            Task::Deblur => {
                if self.kernel.is_none() {
                    return missing("a blur kernel");
                }
                if self.sigma.is_none() {
                    return missing("a noise sigma");
                }
            }
            Task::MixedNoise => {
                if self.sigma.is_none() {
                    return missing("a noise sigma");
                }
                if self.impulse_r.is_none() {
                    return missing("an impulse density");
                }
            }
        }
        Ok(())
    }

    fn solver_params(&self) -> SolverParams {
        let mut params = default_params(self.mu_tilde, self.max_iters, self.nlsm);
        params.lsm_inner_iters = self.lsm_inner_iters;
        params.shrink = self.shrink;
        params.tol = self.tol;
        params
    }
}

/// One finished experiment.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub truth: ImageBuffer,
    pub degraded: ImageBuffer,
    pub restored: ImageBuffer,
    pub telemetry: Telemetry,
    /// The mask actually used, for the tasks that reduce to inpainting.
    pub mask: Option<PixelMask>,
    pub psnr_degraded: f64,
    pub psnr_restored: f64,
    pub wall_seconds: f64,
}

/// The one-line JSON summary written next to each run's images.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub task: Task,
    pub image: String,
    pub params: SummaryParams,
    pub psnr_degraded: f64,
    pub psnr_restored: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryParams {
    pub mu_tilde: f64,
    pub max_iters: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub impulse_r: Option<f64>,
}

pub fn summarize(spec: &ExperimentSpec, output: &RunOutput) -> RunSummary {
    RunSummary {
        task: spec.task,
        image: spec
            .input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        params: SummaryParams {
            mu_tilde: spec.mu_tilde,
            max_iters: spec.max_iters,
            seed: spec.seed,
            ratio: spec.ratio,
            kernel: spec.kernel.map(|k| k.name().to_string()),
            sigma: spec.sigma,
            impulse_r: spec.impulse_r,
        },
        psnr_degraded: output.psnr_degraded,
        psnr_restored: output.psnr_restored,
        wall_seconds: output.wall_seconds,
    }
}

fn finish(
    truth: ImageBuffer,
    degraded: ImageBuffer,
    obs: Observation,
    params: &SolverParams,
    mask: Option<PixelMask>,
    started: Instant,
) -> Result<RunOutput> {
    let psnr_degraded = psnr(&truth, &degraded.clamped(0.0, 255.0))?;
    let (restored, telemetry) = run(&obs, params, Some(&truth))?;
    let psnr_restored = psnr(&truth, &restored)?;
    Ok(RunOutput {
        truth,
        degraded,
        restored,
        telemetry,
        mask,
        psnr_degraded,
        psnr_restored,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Random-sample inpainting: keep a seeded fraction of pixels, zero the
/// rest, restore.
pub fn run_inpaint(spec: &ExperimentSpec) -> Result<RunOutput> {
    spec.validate()?;
    let started = Instant::now();
    let truth = load_image(&spec.input)?;
    let ratio = spec.ratio.expect("validated");
    let mask = make_random_mask(truth.width(), truth.height(), ratio, spec.seed)?;
    let degraded = apply_mask(&truth, &mask)?;
    let obs = Observation {
        y: degraded.clone(),
        op: DegradationOperator::Mask(mask.clone()),
    };
    finish(truth, degraded, obs, &spec.solver_params(), Some(mask), started)
}

/// Text removal: the mask comes from an image, dark strokes marking the
/// missing pixels; otherwise identical to inpainting.
pub fn run_text_removal(spec: &ExperimentSpec) -> Result<RunOutput> {
    spec.validate()?;
    let started = Instant::now();
    let truth = load_image(&spec.input)?;
    let mask_img = load_image(spec.mask_path.as_ref().expect("validated"))?;
    if !truth.same_dims(&mask_img) {
        return Err(Error::DimensionMismatch(format!(
            "mask image {}x{} against input {}x{}",
            mask_img.width(),
            mask_img.height(),
            truth.width(),
            truth.height()
        )));
    }
    let mask = mask_from_image(&mask_img, TEXT_MASK_THRESHOLD)?;
    let degraded = apply_mask(&truth, &mask)?;
    let obs = Observation {
        y: degraded.clone(),
        op: DegradationOperator::Mask(mask.clone()),
    };
    finish(truth, degraded, obs, &spec.solver_params(), Some(mask), started)
}

/// Non-blind deblurring: circular blur plus seeded Gaussian noise.
pub fn run_deblur(spec: &ExperimentSpec) -> Result<RunOutput> {
    spec.validate()?;
    let started = Instant::now();
    let truth = load_image(&spec.input)?;
    let kernel = make_kernel(spec.kernel.expect("validated"));
    let sigma = spec.sigma.expect("validated");
    if sigma < 0.0 {
        return Err(Error::InvalidParameter(format!("negative sigma {sigma}")));
    }
    let degraded = add_gaussian_noise(&circular_convolve(&truth, &kernel), sigma, spec.seed);
    let obs = Observation {
        y: degraded.clone(),
        op: DegradationOperator::Blur(kernel),
    };
    finish(truth, degraded, obs, &spec.solver_params(), None, started)
}

/// Mixed noise removal: Gaussian noise, then salt-and-pepper impulses;
/// the adaptive median detector flags impulse pixels, which are treated
/// as missing and the problem becomes masked inpainting on the noisy
/// observation.
pub fn run_mixed_noise(spec: &ExperimentSpec) -> Result<RunOutput> {
    spec.validate()?;
    let started = Instant::now();
    let truth = load_image(&spec.input)?;
    let sigma = spec.sigma.expect("validated");
    let r = spec.impulse_r.expect("validated");
    if !(0.0..1.0).contains(&r) {
        return Err(Error::InvalidParameter(format!(
            "impulse density {r} outside [0,1)"
        )));
    }
    let noisy = add_gaussian_noise(&truth, sigma, spec.seed);
    let degraded = add_salt_pepper(&noisy, r, derived_seed(spec.seed, 1));
    let mask = adaptive_median_detect(&degraded, AMF_MAX_WINDOW);
    let y = apply_mask(&degraded, &mask)?;
    let obs = Observation {
        y,
        op: DegradationOperator::Mask(mask.clone()),
    };
    finish(truth, degraded, obs, &spec.solver_params(), Some(mask), started)
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunOutput> {
    match spec.task {
        Task::Inpaint => run_inpaint(spec),
        Task::TextRemoval => run_text_removal(spec),
        Task::Deblur => run_deblur(spec),
        Task::MixedNoise => run_mixed_noise(spec),
    }
}

/// Noise deviation matching a blurred-signal-to-noise ratio in dB:
/// `sigma = sqrt(Var(blurred) / 10^(bsnr/10))`.
pub fn bsnr_to_sigma(blurred: &ImageBuffer, bsnr_db: f64) -> f64 {
    (blurred.variance() / 10f64.powf(bsnr_db / 10.0)).sqrt()
}

/// Writes the four artifacts of a finished run into `dir`:
/// `<stem>_degraded.pgm`, `<stem>_restored.pgm`, `<stem>_telemetry.csv`
/// and `<stem>_summary.json` (plus `<stem>_mask.pgm` when a mask was
/// involved). Returns the summary.
pub fn write_run_artifacts(
    dir: &Path,
    stem: &str,
    spec: &ExperimentSpec,
    output: &RunOutput,
) -> Result<RunSummary> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Write {
        path: dir.into(),
        source,
    })?;
    save_image(&output.degraded, dir.join(format!("{stem}_degraded.pgm")))?;
    save_image(&output.restored, dir.join(format!("{stem}_restored.pgm")))?;
    if let Some(mask) = &output.mask {
        save_image(&mask.to_image(), dir.join(format!("{stem}_mask.pgm")))?;
    }
    let csv_path = dir.join(format!("{stem}_telemetry.csv"));
    std::fs::write(&csv_path, output.telemetry.to_csv()).map_err(|source| Error::Write {
        path: csv_path.clone(),
        source,
    })?;
    let summary = summarize(spec, output);
    let json_path = dir.join(format!("{stem}_summary.json"));
    let line = serde_json::to_string(&summary).expect("summary serializes");
    std::fs::write(&json_path, line + "\n").map_err(|source| Error::Write {
        path: json_path.clone(),
        source,
    })?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture(dir: &Path, name: &str, img: &ImageBuffer) -> PathBuf {
        let path = dir.join(name);
        save_image(img, &path).unwrap();
        path
    }

    fn smooth_image(n: usize) -> ImageBuffer {
        ImageBuffer::from_fn(n, n, |r, c| {
            128.0 + 50.0 * ((r as f64 * 0.17).sin() * (c as f64 * 0.12).cos())
        })
    }

    fn quick_spec(task: Task, input: &Path) -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(task, input, 0.05, 8);
        spec.nlsm = NlsmParams {
            block: 4,
            stride: 2,
            window: 12,
            group_size: 4,
        };
        spec.lsm_inner_iters = 5;
        spec
    }

    #[test]
    fn spec_validation_catches_missing_fields() {
        let spec = ExperimentSpec::new(Task::Inpaint, "x.pgm", 0.1, 1);
        assert!(spec.validate().is_err());
        let spec = ExperimentSpec::new(Task::Deblur, "x.pgm", 0.1, 1);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn inpaint_full_ratio_restores_near_perfectly() {
        let dir = tempfile::tempdir().unwrap();
        let input = write_fixture(dir.path(), "in.pgm", &smooth_image(24));
        let mut spec = quick_spec(Task::Inpaint, &input);
        spec.ratio = Some(1.0);
        let out = run_inpaint(&spec).unwrap();
        assert_eq!(out.psnr_degraded, f64::INFINITY);
        assert!(out.psnr_restored > 40.0, "psnr {}", out.psnr_restored);
    }

    #[test]
    fn inpaint_improves_over_the_degraded_image_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let input = write_fixture(dir.path(), "in.pgm", &smooth_image(32));
        let mut spec = quick_spec(Task::Inpaint, &input);
        spec.ratio = Some(0.5);
        spec.seed = 11;
        spec.max_iters = 15;
        let a = run_inpaint(&spec).unwrap();
        assert!(a.psnr_restored > a.psnr_degraded + 3.0);
        let b = run_inpaint(&spec).unwrap();
        assert_eq!(a.restored.data(), b.restored.data());
        assert_eq!(a.psnr_restored, b.psnr_restored);
    }

    #[test]
    fn text_removal_with_all_keep_mask_is_near_identity() {
        let dir = tempfile::tempdir().unwrap();
        let input = write_fixture(dir.path(), "in.pgm", &smooth_image(24));
        let mask = write_fixture(
            dir.path(),
            "mask.pgm",
            &ImageBuffer::from_fn(24, 24, |_, _| 255.0),
        );
        let mut spec = quick_spec(Task::TextRemoval, &input);
        spec.mask_path = Some(mask);
        let out = run_text_removal(&spec).unwrap();
        assert!(out.psnr_restored > 40.0);
    }

    #[test]
    fn text_removal_rejects_mismatched_mask() {
        let dir = tempfile::tempdir().unwrap();
        let input = write_fixture(dir.path(), "in.pgm", &smooth_image(24));
        let mask = write_fixture(
            dir.path(),
            "mask.pgm",
            &ImageBuffer::from_fn(16, 16, |_, _| 255.0),
        );
        let mut spec = quick_spec(Task::TextRemoval, &input);
        spec.mask_path = Some(mask);
        assert!(run_text_removal(&spec).is_err());
    }

    #[test]
    fn single_missing_pixel_is_filled_from_its_neighborhood() {
        let dir = tempfile::tempdir().unwrap();
        let truth = smooth_image(24);
        let input = write_fixture(dir.path(), "in.pgm", &truth);
        let mut mask_img = ImageBuffer::from_fn(24, 24, |_, _| 255.0);
        mask_img[(12, 12)] = 0.0;
        let mask_path = write_fixture(dir.path(), "mask.pgm", &mask_img);
        let mut spec = quick_spec(Task::TextRemoval, &input);
        spec.mask_path = Some(mask_path);
        spec.max_iters = 30;
        let out = run_text_removal(&spec).unwrap();
        // Neighborhood median of the smooth truth around the hole.
        let mut neighborhood: Vec<f64> = Vec::new();
        for r in 11..=13 {
            for c in 11..=13 {
                if (r, c) != (12, 12) {
                    neighborhood.push(truth[(r, c)]);
                }
            }
        }
        neighborhood.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = neighborhood[neighborhood.len() / 2];
        let filled = out.restored[(12, 12)];
        assert!(
            (filled - median).abs() < 5.0,
            "filled {filled}, neighborhood median {median}"
        );
    }

    #[test]
    fn deblur_identity_kernel_no_noise_is_near_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let input = write_fixture(dir.path(), "in.pgm", &smooth_image(24));
        let mut spec = quick_spec(Task::Deblur, &input);
        spec.kernel = Some(KernelKind::Uniform9);
        spec.sigma = Some(0.0);
        spec.max_iters = 20;
        spec.mu_tilde = 1e-3;
        let out = run_deblur(&spec).unwrap();
        assert!(out.psnr_restored > out.psnr_degraded);
    }

    #[test]
    fn mixed_noise_with_no_noise_keeps_almost_everything() {
        let dir = tempfile::tempdir().unwrap();
        let input = write_fixture(dir.path(), "in.pgm", &smooth_image(24));
        let mut spec = quick_spec(Task::MixedNoise, &input);
        spec.sigma = Some(0.0);
        spec.impulse_r = Some(0.0);
        spec.max_iters = 40;
        let out = run_mixed_noise(&spec).unwrap();
        let mask = out.mask.as_ref().unwrap();
        // The detector flags border pixels and local extremes even on
        // clean data; the bulk must be kept and restoration near-exact.
        assert!(mask.count_kept() as f64 >= 0.7 * (24.0 * 24.0));
        assert!(out.psnr_restored > 30.0);
    }

    #[test]
    fn bsnr_sigma_relations() {
        let blurred = smooth_image(32);
        let var = blurred.variance();
        assert!((bsnr_to_sigma(&blurred, 0.0).powi(2) - var).abs() < 1e-9);
        assert!(bsnr_to_sigma(&blurred, 200.0) < 1e-6);
        let flat = ImageBuffer::from_fn(8, 8, |_, _| 7.0);
        assert_eq!(bsnr_to_sigma(&flat, 10.0), 0.0);
    }

    #[test]
    fn artifacts_land_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let input = write_fixture(dir.path(), "in.pgm", &smooth_image(24));
        let mut spec = quick_spec(Task::Inpaint, &input);
        spec.ratio = Some(0.8);
        spec.max_iters = 3;
        let out = run_inpaint(&spec).unwrap();
        let summary = write_run_artifacts(dir.path(), "probe", &spec, &out).unwrap();
        assert!(dir.path().join("probe_degraded.pgm").exists());
        assert!(dir.path().join("probe_restored.pgm").exists());
        assert!(dir.path().join("probe_mask.pgm").exists());
        assert!(dir.path().join("probe_telemetry.csv").exists());
        let json = std::fs::read_to_string(dir.path().join("probe_summary.json")).unwrap();
        assert!(json.contains("\"task\":\"inpaint\""));
        assert!(json.contains("\"image\":\"in\""));
        assert_eq!(summary.psnr_restored, out.psnr_restored);
    }
}
