//! Periodic-boundary Fourier machinery.
//!
//! The forward transform is unnormalized and the inverse divides by `H·W`.
//! Kernels are embedded into the image grid with their anchor
//! `(rows / 2, cols / 2)` moved to index `(0, 0)`, so that a centered delta
//! has an all-ones transfer function.

use std::cell::RefCell;
use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Kernel, Psf};

/// Largest imaginary residue tolerated when collapsing an inverse transform to reals,
/// relative to `max(1, max |real part|)`.
pub const IMAG_RESIDUE_TOL: f64 = 1e-8;

/// Complex H×W array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralGrid {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl SpectralGrid {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("spectrum dimension is zero"));
        }
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "spectrum length {} does not match {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, Complex64::new(0.0, 0.0))
    }

    pub fn filled(height: usize, width: usize, v: Complex64) -> Self {
        Self {
            height,
            width,
            data: vec![v; height * width],
        }
    }

    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Bin-wise `|s|²`.
    pub fn power(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm_sqr()).collect()
    }

    /// Bin-wise product.
    pub fn mul(&self, other: &SpectralGrid) -> Result<SpectralGrid> {
        self.check_dims(other.height, other.width)?;
        Ok(Self::from_raw(
            self.height,
            self.width,
            self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        ))
    }

    pub fn conj(&self) -> SpectralGrid {
        Self::from_raw(
            self.height,
            self.width,
            self.data.iter().map(|c| c.conj()).collect(),
        )
    }

    pub fn check_dims(&self, height: usize, width: usize) -> Result<()> {
        if self.height != height || self.width != width {
            return Err(Error::DimensionMismatch {
                expected_h: height,
                expected_w: width,
                got_h: self.height,
                got_w: self.width,
            });
        }
        Ok(())
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn transpose(src: &[Complex64], rows: usize, cols: usize, dst: &mut [Complex64]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// In-place unnormalized 2-D transform of a row-major buffer.
fn transform_in_place(data: &mut [Complex64], height: usize, width: usize, dir: FftDirection) {
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let row_fft = planner.plan_fft(width, dir);
        let col_fft = planner.plan_fft(height, dir);
        drop(planner);

        let scratch_len = row_fft
            .get_inplace_scratch_len()
            .max(col_fft.get_inplace_scratch_len());
        let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];
        row_fft.process_with_scratch(data, &mut scratch);

        if height > 1 {
            let mut t = vec![Complex64::new(0.0, 0.0); data.len()];
            transpose(data, height, width, &mut t);
            col_fft.process_with_scratch(&mut t, &mut scratch);
            transpose(&t, width, height, data);
        }
    });
}

/// Unnormalized forward 2-D DFT of a real grid.
pub fn fft2(g: &ImageGrid) -> SpectralGrid {
    let (h, w) = g.dims();
    let mut data: Vec<Complex64> = g.as_slice().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_in_place(&mut data, h, w, FftDirection::Forward);
    SpectralGrid::from_raw(h, w, data)
}

/// Forward transform of a complex spectrum-sized buffer.
pub fn fft2_complex(s: &SpectralGrid) -> SpectralGrid {
    let mut out = s.clone();
    transform_in_place(&mut out.data, s.height, s.width, FftDirection::Forward);
    out
}

/// Normalized inverse transform, keeping the complex result.
pub fn ifft2_complex(s: &SpectralGrid) -> SpectralGrid {
    let mut out = s.clone();
    transform_in_place(&mut out.data, s.height, s.width, FftDirection::Inverse);
    let n = (s.height * s.width) as f64;
    out.data.iter_mut().for_each(|c| *c /= n);
    out
}

/// Normalized inverse transform of a conjugate-symmetric spectrum.
///
/// Fails with a numeric-consistency error if any sample carries an imaginary
/// part above [`IMAG_RESIDUE_TOL`] (scaled by `max(1, max |re|)`).
pub fn ifft2(s: &SpectralGrid) -> Result<ImageGrid> {
    let c = ifft2_complex(s);
    let scale = c.data.iter().fold(1.0f64, |m, v| m.max(v.re.abs()));
    let (worst, idx) = c
        .data
        .iter()
        .enumerate()
        .fold((0.0f64, 0usize), |(m, mi), (i, v)| {
            if v.im.abs() > m {
                (v.im.abs(), i)
            } else {
                (m, mi)
            }
        });
    if worst > IMAG_RESIDUE_TOL * scale {
        return Err(Error::NumericConsistency(format!(
            "inverse transform has imaginary residue {worst:e} at ({}, {})",
            idx / s.width,
            idx % s.width
        )));
    }
    if c.data.iter().any(|v| !v.re.is_finite()) {
        return Err(Error::NumericFailure(
            "inverse transform produced a non-finite sample".into(),
        ));
    }
    Ok(ImageGrid::from_raw(
        s.height,
        s.width,
        c.data.into_iter().map(|v| v.re).collect(),
    ))
}

fn check_fits(rows: usize, cols: usize, h: usize, w: usize) -> Result<()> {
    if rows > h || cols > w {
        return Err(Error::invalid(format!(
            "kernel {rows}x{cols} larger than target {h}x{w}"
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::invalid("target dimension is zero"));
    }
    Ok(())
}

/// Zero-pads `k` to `h`×`w` and rolls its anchor to `(0, 0)`.
pub fn embed_kernel(k: &Kernel, h: usize, w: usize) -> Result<ImageGrid> {
    check_fits(k.rows(), k.cols(), h, w)?;
    let (cr, cc) = k.center();
    let mut out = ImageGrid::zeros(h, w);
    let buf = out.as_mut_slice();
    for a in 0..k.rows() {
        let r = (a + h - cr) % h;
        for b in 0..k.cols() {
            let c = (b + w - cc) % w;
            buf[r * w + c] += k.get(a, b);
        }
    }
    Ok(out)
}

/// Adjoint of [`embed_kernel`]: inverse roll, then crop to `rows`×`cols`.
pub fn embed_kernel_adjoint(g: &ImageGrid, rows: usize, cols: usize) -> Result<Kernel> {
    let (h, w) = g.dims();
    check_fits(rows, cols, h, w)?;
    let (cr, cc) = (rows / 2, cols / 2);
    let mut taps = Vec::with_capacity(rows * cols);
    for a in 0..rows {
        let r = (a + h - cr) % h;
        for b in 0..cols {
            let c = (b + w - cc) % w;
            taps.push(g.get(r, c));
        }
    }
    Kernel::new(rows, cols, taps)
}

/// Transfer function of an arbitrary (not necessarily unit-sum) kernel.
pub fn kernel_to_otf(k: &Kernel, h: usize, w: usize) -> Result<SpectralGrid> {
    Ok(fft2(&embed_kernel(k, h, w)?))
}

/// Optical transfer function of a PSF on an `h`×`w` periodic grid.
pub fn psf_to_otf(k: &Psf, h: usize, w: usize) -> Result<SpectralGrid> {
    kernel_to_otf(k.kernel(), h, w)
}

/// Circulant operator given by its transfer function.
#[derive(Debug, Clone)]
pub struct CirculantOperator {
    otf: SpectralGrid,
}

impl CirculantOperator {
    pub fn from_kernel(k: &Kernel, h: usize, w: usize) -> Result<Self> {
        Ok(Self {
            otf: kernel_to_otf(k, h, w)?,
        })
    }

    pub fn from_psf(psf: &Psf, h: usize, w: usize) -> Result<Self> {
        Self::from_kernel(psf.kernel(), h, w)
    }

    pub fn otf(&self) -> &SpectralGrid {
        &self.otf
    }

    fn filter(&self, x: &ImageGrid, f: impl Fn(Complex64) -> Complex64) -> Result<ImageGrid> {
        x.check_dims(self.otf.height, self.otf.width)?;
        let mut s = fft2(x);
        for (v, o) in s.as_mut_slice().iter_mut().zip(self.otf.as_slice()) {
            *v *= f(*o);
        }
        ifft2(&s)
    }

    /// `K x`.
    pub fn apply(&self, x: &ImageGrid) -> Result<ImageGrid> {
        self.filter(x, |o| o)
    }

    /// `Kᵀ x`.
    pub fn apply_adjoint(&self, x: &ImageGrid) -> Result<ImageGrid> {
        self.filter(x, |o| o.conj())
    }

    /// `KᵀK x`.
    pub fn apply_normal(&self, x: &ImageGrid) -> Result<ImageGrid> {
        self.filter(x, |o| Complex64::new(o.norm_sqr(), 0.0))
    }

    /// Largest `|OTF|²`, the spectral norm of `KᵀK`.
    pub fn normal_norm(&self) -> f64 {
        self.otf.as_slice().iter().fold(0.0, |m, o| m.max(o.norm_sqr()))
    }
}

/// Periodic convolution with a PSF computed in the Fourier domain.
pub fn circular_convolve(g: &ImageGrid, k: &Psf) -> Result<ImageGrid> {
    convolve_kernel(g, k.kernel())
}

/// Periodic convolution with any kernel, Fourier path.
pub fn convolve_kernel(g: &ImageGrid, k: &Kernel) -> Result<ImageGrid> {
    CirculantOperator::from_kernel(k, g.height(), g.width())?.apply(g)
}

/// Periodic convolution evaluated directly with wrap-around indexing.
pub fn circular_convolve_spatial(g: &ImageGrid, k: &Kernel) -> Result<ImageGrid> {
    let (h, w) = g.dims();
    check_fits(k.rows(), k.cols(), h, w)?;
    let (cr, cc) = k.center();
    Ok(ImageGrid::from_fn(h, w, |i, j| {
        let mut acc = 0.0;
        for a in 0..k.rows() {
            // x[i - (a - cr)]
            let r = (i + h + cr - a) % h;
            for b in 0..k.cols() {
                let c = (j + w + cc - b) % w;
                acc += k.get(a, b) * g.get(r, c);
            }
        }
        acc
    }))
}

fn zigzag(n: usize) -> Vec<(usize, usize)> {
    let mut order = Vec::with_capacity(n * n);
    for s in 0..(2 * n - 1) {
        let lo = s.saturating_sub(n - 1);
        let hi = s.min(n - 1);
        if s % 2 == 0 {
            for u in (lo..=hi).rev() {
                order.push((u, s - u));
            }
        } else {
            for u in lo..=hi {
                order.push((u, s - u));
            }
        }
    }
    order
}

/// First `count` non-DC orthonormal 2-D DCT-II modes of side `size`, zigzag order.
///
/// Mode `(u, v)` has taps `c(u)·cos(π(2i+1)u/2n) · c(v)·cos(π(2j+1)v/2n)`, where
/// `i` is the row index; the first returned mode varies along columns only.
pub fn dct_basis(size: usize, count: usize) -> Result<Vec<Kernel>> {
    if size == 0 {
        return Err(Error::invalid("dct basis size is zero"));
    }
    if count > size * size - 1 {
        return Err(Error::invalid(format!(
            "requested {count} dct modes but only {} non-DC modes exist for size {size}",
            size * size - 1
        )));
    }
    let n = size as f64;
    let coef = |k: usize| if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
    let basis1d = |k: usize, i: usize| coef(k) * (PI * (2 * i + 1) as f64 * k as f64 / (2.0 * n)).cos();
    zigzag(size)
        .into_iter()
        .skip(1)
        .take(count)
        .map(|(u, v)| {
            let mut taps = Vec::with_capacity(size * size);
            for i in 0..size {
                for j in 0..size {
                    taps.push(basis1d(u, i) * basis1d(v, j));
                }
            }
            Kernel::new(size, size, taps)
        })
        .collect()
}
