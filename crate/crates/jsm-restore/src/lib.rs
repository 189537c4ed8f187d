//! Image restoration by joint local and nonlocal statistical modeling.
//!
//! Degraded observations `y = H x + n` -- masked pixels, circular blur,
//! or mixed Gaussian plus salt-and-pepper noise -- are restored by
//! minimizing
//!
//! ```text
//! 1/2 ||H u - y||^2  +  tau ||D u||_1  +  lambda ||Theta_u||_1
//! ```
//!
//! where `D u` stacks the finite differences of `u` (anisotropic total
//! variation, the local term) and `Theta_u` stacks the orthonormal
//! 3D-transform coefficients of groups of mutually similar blocks
//! (2D DCT per block, partial Haar across each group, the nonlocal
//! term). A split Bregman loop alternates a closed-form data step, a
//! fixed-iteration dual TV prox and transform-domain soft thresholding.
//!
//! The crate is organized along the data flow:
//!
//! - [`image`]: the intensity buffer, PGM/PNG I/O and PSNR;
//! - [`degrade`]: masks, blur kernels, seeded noise and the adaptive
//!   median impulse detector;
//! - [`lsm`]: finite differences and the TV prox;
//! - [`nlsm`]: block matching, group transforms, shrinkage and the
//!   synthesis operator;
//! - [`solver`]: the outer loop and its telemetry;
//! - [`pipelines`]: the four end-to-end experiments.
//!
//! Group-level work is data-parallel under the `parallel` feature
//! (enabled by default) and falls back to plain loops without it;
//! results are bit-identical either way.

pub mod degrade;
mod error;
mod exec;
mod fft;
pub mod image;
pub mod lsm;
pub mod nlsm;
pub mod pipelines;
pub mod solver;

pub use error::{Error, Result};
