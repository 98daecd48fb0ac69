//! Image quality metrics for images on a `[0, 1]` intensity scale.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Kernel};
use crate::spectral::circular_convolve_spatial;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Db(f64),
    /// Zero mean-squared error.
    Identical,
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Db(v) => Some(v),
            Psnr::Identical => None,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v:.4}"),
            Psnr::Identical => f.write_str("identical"),
        }
    }
}

pub fn mse(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    a.check_same(b)?;
    let n = a.as_slice().len() as f64;
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// `10·log10(peak² / MSE)`.
pub fn psnr(estimate: &ImageGrid, truth: &ImageGrid, peak: f64) -> Result<Psnr> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::invalid(format!("psnr peak must be positive, got {peak}")));
    }
    let m = mse(estimate, truth)?;
    if m == 0.0 {
        Ok(Psnr::Identical)
    } else {
        Ok(Psnr::Db(10.0 * (peak * peak / m).log10()))
    }
}

fn ssim_window() -> Kernel {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut taps: Vec<f64> = (0..SSIM_WINDOW * SSIM_WINDOW)
        .map(|i| {
            let (r, q) = ((i / SSIM_WINDOW) as f64 - c, (i % SSIM_WINDOW) as f64 - c);
            (-(r * r + q * q) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    Kernel::new(SSIM_WINDOW, SSIM_WINDOW, taps).expect("odd window")
}

/// Mean structural similarity with an 11×11 Gaussian window (σ 1.5) and
/// periodic boundaries.
pub fn ssim(estimate: &ImageGrid, truth: &ImageGrid) -> Result<f64> {
    estimate.check_same(truth)?;
    let (h, w) = truth.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}"
        )));
    }
    let win = ssim_window();
    let blur = |img: &ImageGrid| circular_convolve_spatial(img, &win);
    let (x, y) = (estimate, truth);
    let mx = blur(x)?;
    let my = blur(y)?;
    let sxx = blur(&x.map(|v| v * v))?;
    let syy = blur(&y.map(|v| v * v))?;
    let xy = ImageGrid::new(
        h,
        w,
        x.as_slice().iter().zip(y.as_slice()).map(|(a, b)| a * b).collect(),
    )?;
    let sxy = blur(&xy)?;
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for i in 0..h * w {
        let (ux, uy) = (mx.as_slice()[i], my.as_slice()[i]);
        let vx = sxx.as_slice()[i] - ux * ux;
        let vy = syy.as_slice()[i] - uy * uy;
        let cxy = sxy.as_slice()[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2))
            / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / (h * w) as f64)
}
