//! 2D FFT on row-major complex buffers, built on rustfft.

use rustfft::num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

fn transform(width: usize, height: usize, data: &mut [Complex<f64>], direction: FftDirection) {
    debug_assert_eq!(data.len(), width * height);
    let mut planner = FftPlanner::new();

    let row_fft = planner.plan_fft(width, direction);
    let mut scratch = vec![Complex::default(); row_fft.get_inplace_scratch_len()];
    for row in data.chunks_exact_mut(width) {
        row_fft.process_with_scratch(row, &mut scratch);
    }

    let mut transposed = vec![Complex::default(); data.len()];
    for r in 0..height {
        for c in 0..width {
            transposed[c * height + r] = data[r * width + c];
        }
    }
    let col_fft = planner.plan_fft(height, direction);
    scratch.resize(col_fft.get_inplace_scratch_len(), Complex::default());
    for col in transposed.chunks_exact_mut(height) {
        col_fft.process_with_scratch(col, &mut scratch);
    }
    for r in 0..height {
        for c in 0..width {
            data[r * width + c] = transposed[c * height + r];
        }
    }
}

/// Forward 2D DFT, unnormalized.
pub(crate) fn fft2(width: usize, height: usize, data: &mut [Complex<f64>]) {
    transform(width, height, data, FftDirection::Forward);
}

/// Inverse 2D DFT, normalized by `1 / (width * height)` so that
/// `ifft2(fft2(x)) == x`.
pub(crate) fn ifft2(width: usize, height: usize, data: &mut [Complex<f64>]) {
    transform(width, height, data, FftDirection::Inverse);
    let scale = 1.0 / (width * height) as f64;
    for v in data {
        *v *= scale;
    }
}

/// Lifts a real buffer into the complex plane.
pub(crate) fn to_complex(data: &[f64]) -> Vec<Complex<f64>> {
    data.iter().map(|&v| Complex::new(v, 0.0)).collect()
}
