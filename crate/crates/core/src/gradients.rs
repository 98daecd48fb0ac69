//! Vector-Jacobian products through the closed-form Wiener solution.
//!
//! With `Ω = |D_K|² + e^α Σ|D_G_d|²`, `x̂ = F^H(conj(D_K)·Fy / Ω)` and an upstream
//! gradient `q = ∂L/∂x̂`:
//!
//! * `∂L/∂α   = −e^α ⟨q, F^H(Σ|D_G|² conj(D_K) Fy / Ω²)⟩`
//! * `∂L/∂g_d = −2e^α · crop(F^H[λ_G_d ⊙ Re(z)])`, `z = conj(D_K)·Fy / Ω² ⊙ conj(Fq)`
//! * `∂L/∂y   = F^H(D_K ⊙ Fq / Ω)`
//!
//! `crop` is the adjoint of the pad-and-roll kernel embedding.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Kernel, Psf};
use crate::rng::SampleRng;
use crate::spectral::{embed_kernel_adjoint, fft2, ifft2, SpectralGrid};
use crate::wiener::{wiener_solve, KernelBank, WienerPlan};

/// Gradient of a scalar loss w.r.t. a kernel bank, laid out like the bank.
#[derive(Debug, Clone, PartialEq)]
pub struct BankGradient {
    pub d_alpha: f64,
    pub d_kernels: Vec<Kernel>,
}

impl BankGradient {
    pub fn zeros_like(bank: &KernelBank) -> Self {
        Self {
            d_alpha: 0.0,
            d_kernels: vec![Kernel::zeros(bank.size(), bank.size()); bank.count()],
        }
    }

    /// Flattened as `[d_alpha, taps…]`, matching [`KernelBank::to_params`].
    pub fn to_params(&self) -> Vec<f64> {
        let mut p = vec![self.d_alpha];
        for k in &self.d_kernels {
            p.extend_from_slice(k.taps());
        }
        p
    }

    pub fn is_finite(&self) -> bool {
        self.d_alpha.is_finite()
            && self
                .d_kernels
                .iter()
                .all(|k| k.taps().iter().all(|t| t.is_finite()))
    }
}

/// Parseval-weighted inner product `(1/N) Σ Re(conj(a)·b)`, equal to the
/// spatial inner product of the inverse transforms.
fn spectral_dot(a: &[Complex64], b: &[Complex64]) -> f64 {
    let n = a.len() as f64;
    a.iter().zip(b).map(|(x, y)| (x.conj() * y).re).sum::<f64>() / n
}

/// `∂⟨q, x̂⟩/∂α`.
pub fn grad_alpha(y: &ImageGrid, plan: &WienerPlan, upstream: &ImageGrid) -> Result<f64> {
    let (h, w) = plan.dims();
    y.check_dims(h, w)?;
    upstream.check_dims(h, w)?;
    let fy = fft2(y);
    let fq = fft2(upstream);
    Ok(grad_alpha_spectral(plan, &fy, &fq))
}

fn grad_alpha_spectral(plan: &WienerPlan, fy: &SpectralGrid, fq: &SpectralGrid) -> f64 {
    let lambda = plan.alpha().exp();
    let dx: Vec<Complex64> = fy
        .as_slice()
        .iter()
        .zip(plan.otf().as_slice())
        .zip(plan.denom())
        .zip(plan.reg_power())
        .map(|(((y, o), d), p)| o.conj() * y * (*p / (d * d)))
        .collect();
    -lambda * spectral_dot(fq.as_slice(), &dx)
}

/// `∂⟨q, x̂⟩/∂(α, g_1…g_D)`.
pub fn grad_bank(
    y: &ImageGrid,
    plan: &WienerPlan,
    bank: &KernelBank,
    upstream: &ImageGrid,
) -> Result<BankGradient> {
    let (h, w) = plan.dims();
    y.check_dims(h, w)?;
    upstream.check_dims(h, w)?;
    if plan.reg_spectra().len() != bank.count() {
        return Err(Error::invalid(format!(
            "plan has {} regularization spectra but bank has {} kernels",
            plan.reg_spectra().len(),
            bank.count()
        )));
    }
    let fy = fft2(y);
    let fq = fft2(upstream);
    let d_alpha = grad_alpha_spectral(plan, &fy, &fq);

    // Re(z), z = conj(D_K)·Fy/Ω² ⊙ conj(Fq)
    let re_z: Vec<f64> = fy
        .as_slice()
        .iter()
        .zip(fq.as_slice())
        .zip(plan.otf().as_slice())
        .zip(plan.denom())
        .map(|(((y, q), o), d)| (o.conj() * y * q.conj()).re / (d * d))
        .collect();

    let scale = -2.0 * plan.alpha().exp();
    let k = bank.size();
    let d_kernels = plan
        .reg_spectra()
        .iter()
        .map(|lam| {
            let prod: Vec<Complex64> = lam
                .as_slice()
                .iter()
                .zip(&re_z)
                .map(|(l, r)| l * r)
                .collect();
            let img = ifft2(&SpectralGrid::from_raw(h, w, prod))?;
            let mut g = embed_kernel_adjoint(&img, k, k)?;
            g.taps_mut().iter_mut().for_each(|t| *t *= scale);
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BankGradient { d_alpha, d_kernels })
}

/// `∂⟨q, x̂⟩/∂y = F^H(D_K ⊙ Fq / Ω)`.
pub fn grad_input(plan: &WienerPlan, upstream: &ImageGrid) -> Result<ImageGrid> {
    let (h, w) = plan.dims();
    upstream.check_dims(h, w)?;
    let fq = fft2(upstream);
    let data = fq
        .as_slice()
        .iter()
        .zip(plan.otf().as_slice())
        .zip(plan.denom())
        .map(|((q, o), d)| o * q / d)
        .collect();
    ifft2(&SpectralGrid::from_raw(h, w, data))
}

/// One coordinate of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct FdEntry {
    pub analytic: f64,
    pub numeric: f64,
    /// `|a − f| / max(|a|, |f|, 1e-8)`; NaN when the loss was not finite.
    pub rel_error: f64,
}

impl FdEntry {
    pub fn is_finite(&self) -> bool {
        self.numeric.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
}

impl FdReport {
    /// Largest relative error over finite entries.
    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.is_finite())
            .fold(0.0, |m, e| m.max(e.rel_error))
    }

    /// Indices whose loss evaluation was not finite.
    pub fn non_finite(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.is_finite())
            .map(|(i, _)| i)
            .collect()
    }
}

pub const FD_STEP: f64 = 1e-5;
pub const REL_ERROR_FLOOR: f64 = 1e-8;

pub fn relative_error(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(REL_ERROR_FLOOR)
}

/// Central differences of `loss` around `params`, compared to `analytic`.
pub fn fd_check<F>(mut loss: F, params: &[f64], analytic: &[f64], step: f64) -> Result<FdReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    if params.len() != analytic.len() {
        return Err(Error::invalid(format!(
            "{} parameters but {} analytic gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let mut p = params.to_vec();
    let entries = analytic
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let orig = p[i];
            p[i] = orig + step;
            let plus = loss(&p);
            p[i] = orig - step;
            let minus = loss(&p);
            p[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let rel_error = if numeric.is_finite() {
                relative_error(a, numeric)
            } else {
                f64::NAN
            };
            FdEntry {
                analytic: a,
                numeric,
                rel_error,
            }
        })
        .collect();
    Ok(FdReport { entries })
}

/// Random restoration problem used for gradient verification.
#[derive(Debug, Clone)]
pub struct GradInstance {
    pub y: ImageGrid,
    pub psf: Psf,
    pub bank: KernelBank,
    pub upstream: ImageGrid,
}

impl GradInstance {
    /// `size`×`size` observation, 3×3 positive PSF, `d` random `k`×`k` kernels.
    pub fn random(size: usize, d: usize, k: usize, seed: u64) -> Result<Self> {
        let mut rng = SampleRng::new(seed);
        let y = ImageGrid::from_fn(size, size, |_, _| rng.uniform());
        let upstream = ImageGrid::from_fn(size, size, |_, _| rng.normal());
        let psf = Psf::normalized(3, 3, (0..9).map(|_| 0.2 + rng.uniform()).collect())?;
        let kernels = (0..d)
            .map(|_| Kernel::new(k, k, (0..k * k).map(|_| 0.5 * rng.normal()).collect()))
            .collect::<Result<Vec<_>>>()?;
        let alpha = rng.uniform_in(-1.0, 1.0);
        let bank = KernelBank::new(kernels, alpha)?;
        Ok(Self {
            y,
            psf,
            bank,
            upstream,
        })
    }

    fn loss_for(&self, bank: &KernelBank, y: &ImageGrid) -> f64 {
        let (h, w) = y.dims();
        WienerPlan::new(&self.psf, bank, h, w)
            .and_then(|p| wiener_solve(y, &p))
            .and_then(|x| x.dot(&self.upstream))
            .unwrap_or(f64::NAN)
    }
}

/// Per-group maxima from [`check_wiener_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckSummary {
    pub alpha: f64,
    pub kernels: f64,
    pub input: f64,
}

impl GradCheckSummary {
    pub fn max(&self) -> f64 {
        self.alpha.max(self.kernels).max(self.input)
    }

    pub fn rows(&self) -> [(&'static str, f64); 3] {
        [("alpha", self.alpha), ("kernels", self.kernels), ("input", self.input)]
    }
}

/// Compares all analytic gradients on `inst` against central differences of
/// the scalar loss `⟨upstream, x̂⟩`.
pub fn check_wiener_gradients(inst: &GradInstance, step: f64) -> Result<GradCheckSummary> {
    let (h, w) = inst.y.dims();
    let plan = WienerPlan::new(&inst.psf, &inst.bank, h, w)?;
    let bank_grad = grad_bank(&inst.y, &plan, &inst.bank, &inst.upstream)?;
    let analytic = bank_grad.to_params();
    let params = inst.bank.to_params();
    let report = fd_check(
        |p| match inst.bank.with_params(p) {
            Ok(b) => inst.loss_for(&b, &inst.y),
            Err(_) => f64::NAN,
        },
        &params,
        &analytic,
        step,
    )?;
    let alpha = report.entries[0].rel_error;
    let kernels = FdReport {
        entries: report.entries[1..].to_vec(),
    }
    .max_rel_error();

    let gy = grad_input(&plan, &inst.upstream)?;
    let input_report = fd_check(
        |p| match ImageGrid::new(h, w, p.to_vec()) {
            Ok(y) => inst.loss_for(&inst.bank, &y),
            Err(_) => f64::NAN,
        },
        inst.y.as_slice(),
        gy.as_slice(),
        step,
    )?;
    if !report.non_finite().is_empty() || !input_report.non_finite().is_empty() {
        return Err(Error::NumericFailure(
            "loss evaluation was not finite during gradient check".into(),
        ));
    }
    Ok(GradCheckSummary {
        alpha,
        kernels,
        input: input_report.max_rel_error(),
    })
}
