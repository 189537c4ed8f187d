//! Grayscale image container, file I/O and the PSNR metric.
//!
//! Intensities live on the 0-255 scale as `f64`; values may leave the
//! range transiently while a solver iterates, and are clamped on save.
//! Binary PGM (P5, maxval 255) is the canonical interchange format,
//! with 8-bit gray / 24-bit RGB PNG accepted for convenience.

use std::fs;
use std::io::Write as _;
use std::ops::{Index, IndexMut};
use std::path::Path;

use crate::error::{Error, Result};

/// A 2D grid of real-valued intensities, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    /// Wraps a row-major buffer; `data.len()` must equal `width * height`
    /// and every value must be finite.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(
                "image dimensions must be positive".into(),
            ));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "buffer of {} values for a {}x{} image",
                data.len(),
                width,
                height
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(
                "image buffer contains non-finite values".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// One image row as a slice.
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Component-wise clamp, used to bring a solver iterate back to the
    /// displayable range.
    pub fn clamped(&self, lo: f64, hi: f64) -> Self {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Mean-removed variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }
}

impl Index<(usize, usize)> for ImageBuffer {
    type Output = f64;

    fn index(&self, (row, col): (usize, usize)) -> &f64 {
        &self.data[row * self.width + col]
    }
}

impl IndexMut<(usize, usize)> for ImageBuffer {
    fn index_mut(&mut self, (row, col): (usize, usize)) -> &mut f64 {
        &mut self.data[row * self.width + col]
    }
}

/// ITU-R BT.601 luminance of an RGB triple on the 0-255 scale.
pub fn luminance_of(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Peak signal-to-noise ratio in dB against a 255 peak. Identical images
/// return `f64::INFINITY`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch(format!(
            "psnr of {}x{} against {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// Loads an 8-bit grayscale PGM (P2 or P5) or an 8-bit gray / 24-bit RGB
/// PNG. Color PNG is reduced to luminance.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Read {
        path: path.into(),
        source,
    })?;
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        return parse_pgm(path, &bytes);
    }
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        return decode_png(path, &bytes);
    }
    Err(Error::UnsupportedImage {
        path: path.into(),
        reason: "not a PGM (P2/P5) or PNG file".into(),
    })
}

/// Clamps to [0,255], rounds half-up and writes binary PGM or PNG chosen
/// by the file extension.
pub fn save_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let quantized: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 255.0) + 0.5).floor() as u8)
        .collect();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("pgm") => {
            let mut out = Vec::with_capacity(quantized.len() + 32);
            write!(out, "P5\n{} {}\n255\n", img.width, img.height).expect("vec write");
            out.extend_from_slice(&quantized);
            fs::write(path, out).map_err(|source| Error::Write {
                path: path.into(),
                source,
            })
        }
        Some("png") => {
            let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, quantized)
                .expect("dimensions match buffer");
            buf.save(path).map_err(|err| Error::Write {
                path: path.into(),
                source: std::io::Error::other(err),
            })
        }
        _ => Err(Error::InvalidParameter(format!(
            "cannot infer image format from {}: use .pgm or .png",
            path.display()
        ))),
    }
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::UnsupportedImage {
        path: path.into(),
        reason: reason.into(),
    }
}

/// PGM header tokens: ASCII fields separated by whitespace, with `#`
/// comments running to end of line.
struct PgmTokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PgmTokens<'a> {
    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn next_usize(&mut self) -> Option<usize> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return None;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()?
            .parse()
            .ok()
    }
}

fn parse_pgm(path: &Path, bytes: &[u8]) -> Result<ImageBuffer> {
    let binary = bytes.starts_with(b"P5");
    let mut tokens = PgmTokens { bytes, pos: 2 };
    let width = tokens
        .next_usize()
        .ok_or_else(|| bad(path, "truncated PGM header (width)"))?;
    let height = tokens
        .next_usize()
        .ok_or_else(|| bad(path, "truncated PGM header (height)"))?;
    let maxval = tokens
        .next_usize()
        .ok_or_else(|| bad(path, "truncated PGM header (maxval)"))?;
    if width == 0 || height == 0 {
        return Err(bad(path, "zero PGM dimensions"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(bad(
            path,
            format!("unsupported PGM maxval {maxval} (8-bit only)"),
        ));
    }
    let n = width * height;
    let data = if binary {
        // Exactly one whitespace byte separates the header from the raster.
        let start = tokens.pos + 1;
        if start + n > bytes.len() {
            return Err(bad(path, "truncated PGM pixel data"));
        }
        bytes[start..start + n].iter().map(|&b| b as f64).collect()
    } else {
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let v = tokens
                .next_usize()
                .ok_or_else(|| bad(path, "truncated PGM pixel data"))?;
            if v > maxval {
                return Err(bad(path, format!("sample {v} exceeds maxval {maxval}")));
            }
            data.push(v as f64);
        }
        data
    };
    ImageBuffer::new(width, height, data)
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<ImageBuffer> {
    let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|err| bad(path, format!("PNG decode failed: {err}")))?;
    match decoded {
        image::DynamicImage::ImageLuma8(gray) => {
            let (w, h) = gray.dimensions();
            let data = gray.into_raw().into_iter().map(|b| b as f64).collect();
            ImageBuffer::new(w as usize, h as usize, data)
        }
        image::DynamicImage::ImageRgb8(rgb) => {
            let (w, h) = rgb.dimensions();
            let data = rgb
                .pixels()
                .map(|p| luminance_of(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64))
                .collect();
            ImageBuffer::new(w as usize, h as usize, data)
        }
        other => Err(bad(
            path,
            format!(
                "unsupported PNG layout {:?} (8-bit gray or 24-bit RGB only)",
                other.color()
            ),
        )),
    }
}
