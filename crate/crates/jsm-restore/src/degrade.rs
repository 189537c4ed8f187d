//! Degradation operators and synthetic noise.
//!
//! Builds the three forms the forward operator takes here -- pixel masks,
//! circular blur kernels, identity -- plus seeded Gaussian and
//! salt-and-pepper noise, and the adaptive median detector that turns
//! mixed-noise removal into masked inpainting.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::exec;
use crate::fft;
use crate::image::ImageBuffer;

/// Which pixels of an observation were actually sampled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    keep: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: usize, height: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask of {} entries for a {}x{} image",
                keep.len(),
                width,
                height
            )));
        }
        if !keep.iter().any(|&k| k) {
            return Err(Error::EmptyMask);
        }
        Ok(Self {
            width,
            height,
            keep,
        })
    }

    pub fn all_true(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            keep: vec![true; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn is_kept(&self, idx: usize) -> bool {
        self.keep[idx]
    }

    pub fn count_kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn matches(&self, img: &ImageBuffer) -> bool {
        self.width == img.width() && self.height == img.height()
    }

    /// Mask as an image: 255 = kept, 0 = killed. The on-disk convention.
    pub fn to_image(&self) -> ImageBuffer {
        ImageBuffer::new(
            self.width,
            self.height,
            self.keep.iter().map(|&k| if k { 255.0 } else { 0.0 }).collect(),
        )
        .expect("mask dims are valid")
    }
}

/// Square convolution kernel with unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    size: usize,
    weights: Vec<f64>,
}

impl BlurKernel {
    /// `size` must be odd, weights non-negative and summing to one
    /// within 1e-12.
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "kernel size {size} must be odd and positive"
            )));
        }
        if weights.len() != size * size {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for a {size}x{size} kernel",
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidParameter("negative kernel weight".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "kernel weights sum to {sum}, expected 1"
            )));
        }
        Ok(Self { size, weights })
    }

    pub fn identity() -> Self {
        Self {
            size: 1,
            weights: vec![1.0],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }

    /// Frequency response on a `width x height` grid: the kernel is
    /// circularly shifted so its center sits at index (0,0) before the
    /// forward transform. Kernels larger than the grid alias, which is
    /// exactly the periodization circular convolution implies.
    pub(crate) fn spectrum(&self, width: usize, height: usize) -> Vec<Complex<f64>> {
        let mut embedded = vec![0.0; width * height];
        let center = (self.size / 2) as isize;
        for kr in 0..self.size {
            for kc in 0..self.size {
                let r = (kr as isize - center).rem_euclid(height as isize) as usize;
                let c = (kc as isize - center).rem_euclid(width as isize) as usize;
                embedded[r * width + c] += self.weight(kr, kc);
            }
        }
        let mut spectrum = fft::to_complex(&embedded);
        fft::fft2(width, height, &mut spectrum);
        spectrum
    }
}

/// The four bundled blur kernels, named by their CLI spellings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// 9x9 uniform.
    Uniform9,
    /// 19x19 uniform (the large-blur setting).
    Uniform19,
    /// 25x25 Gaussian with standard deviation 1.6.
    Gaussian25,
    /// Length-20 motion streak at 45 degrees.
    Motion20,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        KernelKind::Uniform9,
        KernelKind::Uniform19,
        KernelKind::Gaussian25,
        KernelKind::Motion20,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Uniform9 => "uniform9",
            KernelKind::Uniform19 => "uniform19",
            KernelKind::Gaussian25 => "gaussian25",
            KernelKind::Motion20 => "motion20",
        }
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform9" => Ok(KernelKind::Uniform9),
            "uniform19" => Ok(KernelKind::Uniform19),
            "gaussian25" => Ok(KernelKind::Gaussian25),
            "motion20" => Ok(KernelKind::Motion20),
            other => Err(Error::InvalidParameter(format!(
                "unknown kernel `{other}` (expected uniform9 | uniform19 | gaussian25 | motion20)"
            ))),
        }
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Synthetic degradation noise settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Gaussian standard deviation in intensity units.
    pub gaussian_sigma: f64,
    /// Fraction of pixels hit by salt-and-pepper impulses, in [0,1).
    pub impulse_density: f64,
    pub seed: u64,
}

pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for the second noise stage of a mixed
/// degradation, so Gaussian and impulse draws never overlap.
pub fn derived_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

/// Random sampling mask keeping exactly `round(ratio * N)` pixels,
/// chosen by a seeded shuffle of all pixel indices.
pub fn make_random_mask(width: usize, height: usize, ratio: f64, seed: u64) -> Result<PixelMask> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "sampling ratio {ratio} outside (0, 1]"
        )));
    }
    let n = width * height;
    let kept = (ratio * n as f64).round() as usize;
    if kept == 0 {
        return Err(Error::InvalidParameter(format!(
            "ratio {ratio} keeps zero of {n} pixels"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut seeded_rng(seed));
    let mut keep = vec![false; n];
    for &i in &indices[..kept] {
        keep[i] = true;
    }
    PixelMask::new(width, height, keep)
}

/// Reads a mask stored as an image: pixels at or above `threshold` are
/// kept, darker ones (text strokes, scratches) are treated as missing.
pub fn mask_from_image(img: &ImageBuffer, threshold: f64) -> Result<PixelMask> {
    let keep = img.data().iter().map(|&v| v >= threshold).collect();
    PixelMask::new(img.width(), img.height(), keep)
}

/// Keeps observed pixels and zero-fills killed ones. The fill value is a
/// display convention only; the solver never reads killed samples.
pub fn apply_mask(img: &ImageBuffer, mask: &PixelMask) -> Result<ImageBuffer> {
    if !mask.matches(img) {
        return Err(Error::DimensionMismatch(format!(
            "mask {}x{} against image {}x{}",
            mask.width,
            mask.height,
            img.width(),
            img.height()
        )));
    }
    let data = img
        .data()
        .iter()
        .zip(&mask.keep)
        .map(|(&v, &k)| if k { v } else { 0.0 })
        .collect();
    ImageBuffer::new(img.width(), img.height(), data)
}

pub fn make_kernel(kind: KernelKind) -> BlurKernel {
    match kind {
        KernelKind::Uniform9 => uniform_kernel(9),
        KernelKind::Uniform19 => uniform_kernel(19),
        KernelKind::Gaussian25 => gaussian_kernel(25, 1.6),
        KernelKind::Motion20 => motion_kernel(20.0, 45.0),
    }
}

fn uniform_kernel(size: usize) -> BlurKernel {
    let w = 1.0 / (size * size) as f64;
    BlurKernel::new(size, vec![w; size * size]).expect("uniform weights are valid")
}

fn gaussian_kernel(size: usize, sigma: f64) -> BlurKernel {
    let half = (size / 2) as isize;
    let mut weights = Vec::with_capacity(size * size);
    for r in -half..=half {
        for c in -half..=half {
            let d2 = (r * r + c * c) as f64;
            weights.push((-d2 / (2.0 * sigma * sigma)).exp());
        }
    }
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    BlurKernel::new(size, weights).expect("normalized Gaussian weights are valid")
}

/// Anti-aliased line segment of the given length and angle: each cell
/// weighs `max(0, 1 - distance to the segment)`, normalized, embedded in
/// the smallest odd square holding every nonzero cell.
fn motion_kernel(len: f64, angle_deg: f64) -> BlurKernel {
    let phi = angle_deg.to_radians();
    let (sin, cos) = phi.sin_cos();
    let half = (len - 1.0) / 2.0;
    let radius = (half * cos.abs().max(sin.abs()) + 1.0).ceil() as isize;

    let weight_at = |x: f64, y: f64| -> f64 {
        let along = x * cos + y * sin;
        let dist = if along.abs() <= half {
            (-x * sin + y * cos).abs()
        } else {
            let end_x = half.copysign(along) * cos;
            let end_y = half.copysign(along) * sin;
            ((x - end_x).powi(2) + (y - end_y).powi(2)).sqrt()
        };
        (1.0 - dist).max(0.0)
    };

    let mut extent = 0;
    for y in -radius..=radius {
        for x in -radius..=radius {
            if weight_at(x as f64, y as f64) > 0.0 {
                extent = extent.max(x.abs().max(y.abs()));
            }
        }
    }

    let size = (2 * extent + 1) as usize;
    let mut weights = Vec::with_capacity(size * size);
    for y in -extent..=extent {
        for x in -extent..=extent {
            weights.push(weight_at(x as f64, y as f64));
        }
    }
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    BlurKernel::new(size, weights).expect("normalized motion weights are valid")
}

/// Periodic convolution computed in the frequency domain. A unit-mass
/// kernel preserves constants, and `blur(delta)` reproduces the kernel
/// centered at the impulse.
pub fn circular_convolve(img: &ImageBuffer, kernel: &BlurKernel) -> ImageBuffer {
    let (w, h) = (img.width(), img.height());
    let spectrum = kernel.spectrum(w, h);
    let mut buf = fft::to_complex(img.data());
    fft::fft2(w, h, &mut buf);
    for (v, d) in buf.iter_mut().zip(&spectrum) {
        *v *= d;
    }
    fft::ifft2(w, h, &mut buf);
    ImageBuffer::new(w, h, buf.into_iter().map(|c| c.re).collect())
        .expect("convolution preserves dimensions and finiteness")
}

/// Adds i.i.d. zero-mean Gaussian samples of the given standard
/// deviation. No clamping: the solver consumes real-valued observations.
pub fn add_gaussian_noise(img: &ImageBuffer, sigma: f64, seed: u64) -> ImageBuffer {
    if sigma == 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated non-negative");
    let mut rng = seeded_rng(seed);
    img.map(|v| v + normal.sample(&mut rng))
}

/// Sets exactly `round(r * N)` pixels, chosen by seeded shuffle, to 0 or
/// 255 with equal probability.
pub fn add_salt_pepper(img: &ImageBuffer, r: f64, seed: u64) -> ImageBuffer {
    assert!((0.0..1.0).contains(&r), "impulse density {r} outside [0,1)");
    let n = img.len();
    let corrupted = (r * n as f64).round() as usize;
    if corrupted == 0 {
        return img.clone();
    }
    let mut rng = seeded_rng(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let mut out = img.clone();
    for &i in &indices[..corrupted] {
        out.data_mut()[i] = if rng.random_bool(0.5) { 255.0 } else { 0.0 };
    }
    out
}

/// Adaptive median impulse detector. For each pixel the window grows
/// 3, 5, ... `max_window`; once the window median is strictly between
/// the window extremes the pixel is kept iff its own value is too.
/// Pixels still unresolved at `max_window`, and pixels sitting on a
/// window extreme, are flagged as impulses (keep = false). Border
/// windows are clipped to the image.
pub fn adaptive_median_detect(img: &ImageBuffer, max_window: usize) -> PixelMask {
    assert!(
        max_window >= 3 && max_window % 2 == 1,
        "window cap {max_window} must be odd and >= 3"
    );
    let (w, h) = (img.width(), img.height());
    let keep = exec::map_indexed(w * h, |idx| {
        let (row, col) = (idx / w, idx % w);
        let value = img.data()[idx];
        let mut window = Vec::with_capacity(max_window * max_window);
        let mut size = 3;
        loop {
            let half = size / 2;
            let r0 = row.saturating_sub(half);
            let r1 = (row + half).min(h - 1);
            let c0 = col.saturating_sub(half);
            let c1 = (col + half).min(w - 1);
            window.clear();
            for r in r0..=r1 {
                window.extend_from_slice(&img.row(r)[c0..=c1]);
            }
            window.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite intensities"));
            let min = window[0];
            let med = window[window.len() / 2];
            let max = window[window.len() - 1];
            if min < med && med < max {
                return min < value && value < max;
            }
            size += 2;
            if size > max_window {
                return false;
            }
        }
    });
    PixelMask {
        width: w,
        height: h,
        keep,
    }
}
