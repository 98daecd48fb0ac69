//! Spatially-adaptive regularization solved with matrix-free conjugate gradient.
//!
//! Each pixel carries its own `k`×`k` kernel. The operator `G` correlates the
//! image with the kernel of the output pixel, wrapping at the borders:
//!
//! ```text
//! (Gx)[i, j] = Σ_{a,b} field[i, j][a, b] · x[i + a − c, j + b − c],   c = k / 2
//! ```
//!
//! The restoration solves `(KᵀK + e^α GᵀG) x = Kᵀy`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Kernel, Psf};
use crate::spectral::CirculantOperator;

/// Per-pixel `k`×`k` kernels, pixel-major then row-major within each kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelKernelField {
    height: usize,
    width: usize,
    k: usize,
    taps: Vec<f64>,
}

impl PixelKernelField {
    pub fn new(height: usize, width: usize, k: usize, taps: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || k == 0 {
            return Err(Error::invalid("field dimensions must be positive"));
        }
        if k > height || k > width {
            return Err(Error::invalid(format!(
                "field kernel {k}x{k} larger than image {height}x{width}"
            )));
        }
        if taps.len() != height * width * k * k {
            return Err(Error::invalid(format!(
                "field has {} taps, expected {}",
                taps.len(),
                height * width * k * k
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("field contains a non-finite tap"));
        }
        Ok(Self {
            height,
            width,
            k,
            taps,
        })
    }

    /// The same kernel at every pixel.
    pub fn constant(height: usize, width: usize, kernel: &Kernel) -> Result<Self> {
        if kernel.rows() != kernel.cols() {
            return Err(Error::invalid("field kernels must be square"));
        }
        let taps = kernel.taps().repeat(height * width);
        Self::new(height, width, kernel.rows(), taps)
    }

    pub fn zeros(height: usize, width: usize, k: usize) -> Result<Self> {
        Self::new(height, width, k, vec![0.0; height * width * k * k])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        k: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut taps = Vec::with_capacity(height * width * k * k);
        for i in 0..height {
            for j in 0..width {
                for a in 0..k {
                    for b in 0..k {
                        taps.push(f(i, j, a, b));
                    }
                }
            }
        }
        Self::new(height, width, k, taps)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Kernel taps of pixel `(i, j)`.
    pub fn kernel_at(&self, i: usize, j: usize) -> &[f64] {
        let kk = self.k * self.k;
        let p = i * self.width + j;
        &self.taps[p * kk..(p + 1) * kk]
    }

    fn check(&self, x: &ImageGrid) -> Result<()> {
        x.check_dims(self.height, self.width)
    }
}

/// `G x`.
pub fn apply_g(x: &ImageGrid, field: &PixelKernelField) -> Result<ImageGrid> {
    field.check(x)?;
    let (h, w, k) = (field.height, field.width, field.k);
    let c = k / 2;
    let mut out = vec![0.0; h * w];
    out.par_chunks_mut(w).enumerate().for_each(|(i, row)| {
        for (j, o) in row.iter_mut().enumerate() {
            let kern = field.kernel_at(i, j);
            let mut acc = 0.0;
            for a in 0..k {
                let r = (i + a + h - c) % h;
                for b in 0..k {
                    let s = (j + b + w - c) % w;
                    acc += kern[a * k + b] * x.get(r, s);
                }
            }
            *o = acc;
        }
    });
    Ok(ImageGrid::from_raw(h, w, out))
}

/// `Gᵀ r`, evaluated as a gather so output pixels are independent.
pub fn apply_g_adjoint(r: &ImageGrid, field: &PixelKernelField) -> Result<ImageGrid> {
    field.check(r)?;
    let (h, w, k) = (field.height, field.width, field.k);
    let c = k / 2;
    let mut out = vec![0.0; h * w];
    out.par_chunks_mut(w).enumerate().for_each(|(p, row)| {
        for (q, o) in row.iter_mut().enumerate() {
            // (p, q) = (i + a − c, j + b − c)  ⇒  i = p − a + c
            let mut acc = 0.0;
            for a in 0..k {
                let i = (p + c + h - a) % h;
                for b in 0..k {
                    let j = (q + c + w - b) % w;
                    acc += field.kernel_at(i, j)[a * k + b] * r.get(i, j);
                }
            }
            *o = acc;
        }
    });
    Ok(ImageGrid::from_raw(h, w, out))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgConfig {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            rel_tol: 1e-6,
            abs_tol: 1e-12,
        }
    }
}

impl CgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return Err(Error::invalid("cg tolerances must be positive"));
        }
        Ok(())
    }
}

/// Outcome of a conjugate-gradient run.
#[derive(Debug, Clone, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    /// `‖b − A x‖₂` of the returned iterate, recomputed from scratch.
    pub residual: f64,
    /// Stopping threshold `max(abs_tol, rel_tol·‖b‖)`.
    pub threshold: f64,
    pub converged: bool,
    /// Residual norm of the best iterate so far, starting with the initial guess.
    pub residual_history: Vec<f64>,
    /// Recurrence residual norm of each CG iterate (not monotone in general).
    pub raw_residuals: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: ImageGrid,
    pub report: CgReport,
}

/// Conjugate gradient for a symmetric positive semidefinite operator, from `x = 0`.
///
/// Stops when the residual drops to `max(abs_tol, rel_tol·‖b‖)`; otherwise
/// returns the iterate with the smallest residual and `converged = false`.
pub fn conjugate_gradient<A>(apply: A, b: &ImageGrid, cfg: &CgConfig) -> Result<CgSolution>
where
    A: Fn(&ImageGrid) -> Result<ImageGrid>,
{
    cfg.validate()?;
    let (h, w) = b.dims();
    let b_norm = b.norm();
    let threshold = cfg.abs_tol.max(cfg.rel_tol * b_norm);

    let mut x = ImageGrid::zeros(h, w);
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.norm_sq();
    let mut best = (rs.sqrt(), x.clone());
    let mut history = vec![best.0];
    let mut raw = vec![best.0];
    let mut iterations = 0;

    while rs.sqrt() > threshold && iterations < cfg.max_iter {
        let ap = apply(&p)?;
        let pap = p.dot(&ap)?;
        if !pap.is_finite() {
            return Err(Error::NumericFailure(format!(
                "cg curvature is not finite at iteration {}",
                iterations + 1
            )));
        }
        if pap <= 0.0 {
            // Direction lies in the null space; nothing left to reduce.
            break;
        }
        let step = rs / pap;
        for (xi, pi) in x.as_mut_slice().iter_mut().zip(p.as_slice()) {
            *xi += step * pi;
        }
        for (ri, api) in r.as_mut_slice().iter_mut().zip(ap.as_slice()) {
            *ri -= step * api;
        }
        let rs_new = r.norm_sq();
        iterations += 1;
        if !rs_new.is_finite() {
            return Err(Error::NumericFailure(format!(
                "cg residual is not finite at iteration {iterations}"
            )));
        }
        let rn = rs_new.sqrt();
        raw.push(rn);
        if rn < best.0 {
            best = (rn, x.clone());
        }
        history.push(best.0);
        let beta = rs_new / rs;
        for (pi, ri) in p.as_mut_slice().iter_mut().zip(r.as_slice()) {
            *pi = ri + beta * *pi;
        }
        rs = rs_new;
    }

    let x = best.1;
    let residual = b.sub(&apply(&x)?)?.norm();
    if !residual.is_finite() {
        return Err(Error::NumericFailure("cg solution is not finite".into()));
    }
    Ok(CgSolution {
        x,
        report: CgReport {
            iterations,
            residual,
            threshold,
            converged: best.0 <= threshold,
            residual_history: history,
            raw_residuals: raw,
        },
    })
}

/// Normal operator `KᵀK + e^α GᵀG` for one problem instance.
pub struct SaOperator<'a> {
    blur: CirculantOperator,
    field: &'a PixelKernelField,
    lambda: f64,
}

impl<'a> SaOperator<'a> {
    pub fn new(psf: &Psf, field: &'a PixelKernelField, alpha: f64) -> Result<Self> {
        Ok(Self {
            blur: CirculantOperator::from_psf(psf, field.height, field.width)?,
            field,
            lambda: alpha.exp(),
        })
    }

    pub fn apply(&self, x: &ImageGrid) -> Result<ImageGrid> {
        let data = self.blur.apply_normal(x)?;
        let reg = apply_g_adjoint(&apply_g(x, self.field)?, self.field)?;
        data.axpby(1.0, &reg, self.lambda)
    }

    /// `Kᵀy`.
    pub fn rhs(&self, y: &ImageGrid) -> Result<ImageGrid> {
        self.blur.apply_adjoint(y)
    }
}

/// Solves `(KᵀK + e^α GᵀG) x = Kᵀy` by conjugate gradient.
pub fn solve_sa(
    y: &ImageGrid,
    psf: &Psf,
    field: &PixelKernelField,
    alpha: f64,
    cfg: &CgConfig,
) -> Result<CgSolution> {
    field.check(y)?;
    let op = SaOperator::new(psf, field, alpha)?;
    let b = op.rhs(y)?;
    conjugate_gradient(|x| op.apply(x), &b, cfg)
}
