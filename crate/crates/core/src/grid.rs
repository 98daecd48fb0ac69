//! Real-valued rasters and small convolution kernels.

use crate::error::{Error, Result};

/// Real H×W raster, row-major. Carries images, gradients and residuals alike.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    /// Builds a grid, rejecting wrong lengths, empty dimensions and non-finite samples.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("grid dimension is zero ({height}x{width})")));
        }
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "grid data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite sample at ({}, {})",
                i / width,
                i % width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Wraps a buffer produced internally; lengths are trusted, finiteness is not checked.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the samples. Callers keep the samples finite.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self::from_raw(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Element-wise `a·self + b·other`.
    pub fn axpby(&self, a: f64, other: &ImageGrid, b: f64) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self::from_raw(
            self.height,
            self.width,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        ))
    }

    pub fn sub(&self, other: &ImageGrid) -> Result<Self> {
        self.axpby(1.0, other, -1.0)
    }

    pub fn add(&self, other: &ImageGrid) -> Result<Self> {
        self.axpby(1.0, other, 1.0)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn dot(&self, other: &ImageGrid) -> Result<f64> {
        self.check_same(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Largest absolute per-sample difference.
    pub fn max_abs_diff(&self, other: &ImageGrid) -> Result<f64> {
        self.check_same(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Copies the `rows`×`cols` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || top + rows > self.height || left + cols > self.width {
            return Err(Error::invalid(format!(
                "crop {rows}x{cols} at ({top}, {left}) outside {}x{} grid",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(rows, cols, |r, c| self.get(top + r, left + c)))
    }

    pub fn check_same(&self, other: &ImageGrid) -> Result<()> {
        self.check_dims(other.height, other.width)
    }

    /// Errors unless this grid is `height`×`width`.
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

/// Small real kernel with unconstrained taps, row-major.
///
/// The anchor is `(rows / 2, cols / 2)` for both odd and even sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    rows: usize,
    cols: usize,
    taps: Vec<f64>,
}

impl Kernel {
    pub fn new(rows: usize, cols: usize, taps: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("kernel dimension is zero"));
        }
        if taps.len() != rows * cols {
            return Err(Error::invalid(format!(
                "kernel tap count {} does not match {rows}x{cols}",
                taps.len()
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("kernel contains a non-finite tap"));
        }
        Ok(Self { rows, cols, taps })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            taps: vec![0.0; rows * cols],
        }
    }

    /// Unit impulse at the anchor.
    pub fn delta(rows: usize, cols: usize) -> Self {
        let mut k = Self::zeros(rows, cols);
        let (cr, cc) = k.center();
        k.taps[cr * cols + cc] = 1.0;
        k
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn center(&self) -> (usize, usize) {
        (self.rows / 2, self.cols / 2)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.taps[r * self.cols + c]
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn taps_mut(&mut self) -> &mut [f64] {
        &mut self.taps
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }
}

/// Blur kernel: nonnegative taps summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf(Kernel);

impl Psf {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(rows: usize, cols: usize, taps: Vec<f64>) -> Result<Self> {
        Self::from_kernel(Kernel::new(rows, cols, taps)?)
    }

    pub fn from_kernel(kernel: Kernel) -> Result<Self> {
        if kernel.taps.iter().any(|&t| t < 0.0) {
            return Err(Error::invalid("psf has a negative tap"));
        }
        let s = kernel.sum();
        if (s - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::invalid(format!("psf taps sum to {s}, expected 1")));
        }
        Ok(Psf(kernel))
    }

    /// Rescales nonnegative taps to unit sum.
    pub fn normalized(rows: usize, cols: usize, mut taps: Vec<f64>) -> Result<Self> {
        let s: f64 = taps.iter().sum();
        if !(s > 0.0) {
            return Err(Error::invalid("psf taps sum to zero"));
        }
        taps.iter_mut().for_each(|t| *t /= s);
        Self::new(rows, cols, taps)
    }

    pub fn delta() -> Self {
        Psf(Kernel::delta(1, 1))
    }

    pub fn kernel(&self) -> &Kernel {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows
    }

    pub fn cols(&self) -> usize {
        self.0.cols
    }

    pub fn taps(&self) -> &[f64] {
        &self.0.taps
    }
}
