//! Deconvolution of blurred, noisy grayscale images with Wiener-Kolmogorov
//! filters whose Tikhonov regularizer is a learnable bank of convolution kernels.

// `!(x > 0.0)` is deliberate: it rejects NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod degrade;
pub mod error;
pub mod gradients;
pub mod grid;
pub mod io;
pub mod iterative;
pub mod metrics;
pub mod rng;
pub mod spatial_cg;
pub mod spectral;
pub mod trainer;
pub mod vst;
pub mod wiener;

pub use error::{Error, Result};
pub use grid::{ImageGrid, Kernel, Psf};
pub use spectral::SpectralGrid;
pub use wiener::{KernelBank, WienerPlan};
