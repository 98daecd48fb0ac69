//! Closed-form Wiener-Kolmogorov restoration with a learnable kernel bank.
//!
//! The estimate minimizes
//!
//! ```text
//! J(x) = ½‖y − Kx‖² + ½·e^α·Σ_d ‖G_d x‖²
//! ```
//!
//! whose normal equations `(KᵀK + e^α Σ G_dᵀG_d) x = Kᵀy` are diagonal in the
//! Fourier domain under periodic boundaries.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Kernel, Psf};
use crate::spectral::{
    circular_convolve, convolve_kernel, dct_basis, fft2, ifft2, kernel_to_otf, psf_to_otf,
    SpectralGrid,
};

/// Default bank: eight 3×3 DCT modes.
pub const DEFAULT_COUNT: usize = 8;
pub const DEFAULT_SIZE: usize = 3;
/// Ablation bank: twenty-four 5×5 DCT modes.
pub const ABLATION_COUNT: usize = 24;
pub const ABLATION_SIZE: usize = 5;

/// Regularization kernels `g_d` (all `k`×`k`) plus the log trade-off `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    k: usize,
    kernels: Vec<Kernel>,
    alpha: f64,
}

impl KernelBank {
    pub fn new(kernels: Vec<Kernel>, alpha: f64) -> Result<Self> {
        let Some(first) = kernels.first() else {
            return Err(Error::invalid("kernel bank needs at least one kernel"));
        };
        let k = first.rows();
        if kernels.iter().any(|g| g.rows() != k || g.cols() != k) {
            return Err(Error::invalid("bank kernels must all be square and the same size"));
        }
        if !alpha.is_finite() {
            return Err(Error::invalid("alpha must be finite"));
        }
        Ok(Self { k, kernels, alpha })
    }

    /// `d` DCT modes of side `k`, the usual initialization.
    pub fn dct(d: usize, k: usize, alpha: f64) -> Result<Self> {
        Self::new(dct_basis(k, d)?, alpha)
    }

    pub fn default_bank() -> Self {
        Self::dct(DEFAULT_COUNT, DEFAULT_SIZE, 0.0).expect("default bank is valid")
    }

    pub fn ablation_bank() -> Self {
        Self::dct(ABLATION_COUNT, ABLATION_SIZE, 0.0).expect("ablation bank is valid")
    }

    pub fn zeros(d: usize, k: usize, alpha: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("kernel size is zero"));
        }
        Self::new(vec![Kernel::zeros(k, k); d], alpha)
    }

    pub fn count(&self) -> usize {
        self.kernels.len()
    }

    pub fn size(&self) -> usize {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.alpha = alpha;
    }

    /// `λ = e^α`.
    pub fn lambda(&self) -> f64 {
        self.alpha.exp()
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn kernels_mut(&mut self) -> &mut [Kernel] {
        &mut self.kernels
    }

    /// Number of scalars in `[alpha, taps of g_1, …, taps of g_D]`.
    pub fn param_len(&self) -> usize {
        1 + self.kernels.len() * self.k * self.k
    }

    /// Flattens to `[alpha, taps of g_1, …, taps of g_D]`.
    pub fn to_params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_len());
        p.push(self.alpha);
        for g in &self.kernels {
            p.extend_from_slice(g.taps());
        }
        p
    }

    /// Inverse of [`KernelBank::to_params`] keeping this bank's shape.
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.param_len() {
            return Err(Error::invalid(format!(
                "expected {} bank parameters, got {}",
                self.param_len(),
                params.len()
            )));
        }
        let kk = self.k * self.k;
        let kernels = params[1..]
            .chunks(kk)
            .map(|c| Kernel::new(self.k, self.k, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(kernels, params[0])
    }

    /// Serializes to the `WKBANK 1` text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "WKBANK 1");
        let _ = writeln!(s, "{} {} {}", self.count(), self.k, self.alpha);
        for g in &self.kernels {
            for r in 0..self.k {
                let row: Vec<String> = (0..self.k).map(|c| format!("{}", g.get(r, c))).collect();
                let _ = writeln!(s, "{}", row.join(" "));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let ctx = "kernel bank";
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        match lines.next() {
            Some("WKBANK 1") => {}
            other => return Err(Error::format(ctx, format!("bad header {other:?}"))),
        }
        let header = lines
            .next()
            .ok_or_else(|| Error::format(ctx, "missing `d k alpha` line"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::format(ctx, format!("expected `d k alpha`, got {header:?}")));
        }
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::format(ctx, format!("bad integer {s:?}: {e}")))
        };
        let d = parse_usize(fields[0])?;
        let k = parse_usize(fields[1])?;
        let alpha: f64 = fields[2]
            .parse()
            .map_err(|e| Error::format(ctx, format!("bad alpha {:?}: {e}", fields[2])))?;
        if d == 0 || k == 0 {
            return Err(Error::format(ctx, "d and k must be positive"));
        }
        let mut kernels = Vec::with_capacity(d);
        for di in 0..d {
            let mut taps = Vec::with_capacity(k * k);
            for r in 0..k {
                let line = lines.next().ok_or_else(|| {
                    Error::format(ctx, format!("kernel {di} truncated at row {r}"))
                })?;
                let row = line
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|e| Error::format(ctx, format!("bad tap {t:?}: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if row.len() != k {
                    return Err(Error::format(
                        ctx,
                        format!("kernel {di} row {r} has {} taps, expected {k}", row.len()),
                    ));
                }
                taps.extend(row);
            }
            kernels.push(Kernel::new(k, k, taps).map_err(|e| Error::format(ctx, e.to_string()))?);
        }
        if lines.next().is_some() {
            return Err(Error::format(ctx, "trailing data after last kernel"));
        }
        Self::new(kernels, alpha)
    }
}

/// Precomputed spectra and denominator for repeated restorations at one size.
#[derive(Debug, Clone)]
pub struct WienerPlan {
    height: usize,
    width: usize,
    otf: SpectralGrid,
    reg_spectra: Vec<SpectralGrid>,
    reg_power: Vec<f64>,
    denom: Vec<f64>,
    alpha: f64,
}

/// Bins whose denominator falls below this fraction of the largest bin are treated as zero.
const SINGULAR_FRACTION: f64 = 1e-20;

impl WienerPlan {
    pub fn new(psf: &Psf, bank: &KernelBank, height: usize, width: usize) -> Result<Self> {
        let otf = psf_to_otf(psf, height, width)?;
        let reg_spectra = bank
            .kernels()
            .iter()
            .map(|g| kernel_to_otf(g, height, width))
            .collect::<Result<Vec<_>>>()?;
        Self::from_spectra(otf, reg_spectra, bank.alpha())
    }

    /// Assembles a plan from precomputed transfer functions.
    pub fn from_spectra(
        otf: SpectralGrid,
        reg_spectra: Vec<SpectralGrid>,
        alpha: f64,
    ) -> Result<Self> {
        let (height, width) = otf.dims();
        for s in &reg_spectra {
            s.check_dims(height, width)?;
        }
        let mut reg_power = vec![0.0; height * width];
        for s in &reg_spectra {
            for (p, v) in reg_power.iter_mut().zip(s.as_slice()) {
                *p += v.norm_sqr();
            }
        }
        let lambda = alpha.exp();
        let denom: Vec<f64> = otf
            .as_slice()
            .iter()
            .zip(&reg_power)
            .map(|(o, p)| o.norm_sqr() + lambda * p)
            .collect();
        let peak = denom.iter().cloned().fold(0.0, f64::max);
        if let Some(i) = denom
            .iter()
            .position(|&d| !(d > SINGULAR_FRACTION * peak) || !d.is_finite())
        {
            return Err(Error::IllPosed {
                row: i / width,
                col: i % width,
            });
        }
        Ok(Self {
            height,
            width,
            otf,
            reg_spectra,
            reg_power,
            denom,
            alpha,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn otf(&self) -> &SpectralGrid {
        &self.otf
    }

    pub fn reg_spectra(&self) -> &[SpectralGrid] {
        &self.reg_spectra
    }

    /// `Σ_d |D_G_d|²` per bin.
    pub fn reg_power(&self) -> &[f64] {
        &self.reg_power
    }

    /// `|D_K|² + e^α Σ_d |D_G_d|²` per bin.
    pub fn denom(&self) -> &[f64] {
        &self.denom
    }

    /// Recomputes the denominator from the stored spectra.
    pub fn recompute_denom(&self) -> Vec<f64> {
        let lambda = self.alpha.exp();
        self.otf
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, o)| {
                o.norm_sqr()
                    + lambda
                        * self
                            .reg_spectra
                            .iter()
                            .map(|s| s.as_slice()[i].norm_sqr())
                            .sum::<f64>()
            })
            .collect()
    }

    /// Restored spectrum `conj(D_K)·Fy / Ω` for a given `Fy`.
    pub(crate) fn restore_spectrum(&self, fy: &SpectralGrid) -> SpectralGrid {
        let data = fy
            .as_slice()
            .iter()
            .zip(self.otf.as_slice())
            .zip(&self.denom)
            .map(|((y, o), d)| o.conj() * y / d)
            .collect();
        SpectralGrid::from_raw(self.height, self.width, data)
    }
}

/// Builds the plan for `psf` and `bank` on an `h`×`w` grid.
pub fn plan(psf: &Psf, bank: &KernelBank, h: usize, w: usize) -> Result<WienerPlan> {
    WienerPlan::new(psf, bank, h, w)
}

/// One-shot restoration `F^H(conj(D_K)·Fy / Ω)`.
pub fn wiener_solve(y: &ImageGrid, plan: &WienerPlan) -> Result<ImageGrid> {
    y.check_dims(plan.height, plan.width)?;
    ifft2(&plan.restore_spectrum(&fft2(y)))
}

/// Evaluates `½‖y − Kx‖² + ½·e^α·Σ_d ‖G_d x‖²` with periodic convolutions.
pub fn objective(x: &ImageGrid, y: &ImageGrid, psf: &Psf, bank: &KernelBank) -> Result<f64> {
    x.check_same(y)?;
    let residual = circular_convolve(x, psf)?.sub(y)?;
    let mut reg = 0.0;
    for g in bank.kernels() {
        reg += convolve_kernel(x, g)?.norm_sq();
    }
    Ok(0.5 * residual.norm_sq() + 0.5 * bank.lambda() * reg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_psf_zero_bank_denominator_is_one() {
        let bank = KernelBank::zeros(3, 3, 1.7).unwrap();
        let p = plan(&Psf::delta(), &bank, 5, 4).unwrap();
        assert!(p.denom().iter().all(|&d| (d - 1.0).abs() < 1e-14));
    }

    #[test]
    fn delta_regularizer_doubles_denominator() {
        let bank = KernelBank::new(vec![Kernel::delta(3, 3)], 0.0).unwrap();
        let p = plan(&Psf::delta(), &bank, 6, 6).unwrap();
        assert!(p.denom().iter().all(|&d| (d - 2.0).abs() < 1e-14));
        let again = p.recompute_denom();
        for (a, b) in again.iter().zip(p.denom()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_spectral_zero_is_ill_posed() {
        // 1x2 box has a zero at the horizontal Nyquist bin; zero bank leaves it uncovered.
        let psf = Psf::new(1, 2, vec![0.5, 0.5]).unwrap();
        let bank = KernelBank::zeros(1, 1, 0.0).unwrap();
        match plan(&psf, &bank, 4, 4) {
            Err(Error::IllPosed { row, col }) => assert_eq!((row, col), (0, 2)),
            other => panic!("expected ill-posed, got {other:?}"),
        }
    }

    #[test]
    fn identity_restoration() {
        let y = ImageGrid::from_fn(6, 7, |r, c| (r * 7 + c) as f64 * 0.01);
        let p = plan(&Psf::delta(), &KernelBank::zeros(2, 3, 0.0).unwrap(), 6, 7).unwrap();
        assert!(wiener_solve(&y, &p).unwrap().max_abs_diff(&y).unwrap() < 1e-10);
        let wrong = ImageGrid::zeros(7, 6);
        assert!(matches!(wiener_solve(&wrong, &p), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn objective_trivia() {
        let y = ImageGrid::from_fn(5, 5, |r, c| ((r + 2 * c) % 3) as f64);
        let bank = KernelBank::default_bank();
        let x0 = ImageGrid::zeros(5, 5);
        let j = objective(&x0, &y, &Psf::delta(), &bank).unwrap();
        assert!((j - 0.5 * y.norm_sq()).abs() < 1e-12);
        let zero = KernelBank::zeros(1, 3, 0.0).unwrap();
        assert!(objective(&y, &y, &Psf::delta(), &zero).unwrap().abs() < 1e-20);
    }

    #[test]
    fn bank_text_roundtrip_and_errors() {
        let mut bank = KernelBank::dct(2, 3, -1.25).unwrap();
        bank.kernels_mut()[0].taps_mut()[4] = 1.0 / 3.0;
        let text = bank.to_text();
        assert!(text.starts_with("WKBANK 1\n2 3 -1.25\n"));
        assert_eq!(KernelBank::from_text(&text).unwrap(), bank);
        assert!(KernelBank::from_text("WKBANK 2\n1 1 0\n1\n").is_err());
        assert!(KernelBank::from_text("WKBANK 1\n1 2 0\n1 2\n3\n").is_err());
        assert!(KernelBank::from_text("WKBANK 1\n1 1 0\n1\n2\n").is_err());
    }

    #[test]
    fn params_roundtrip() {
        let bank = KernelBank::dct(3, 3, 0.4).unwrap();
        let p = bank.to_params();
        assert_eq!(p.len(), 28);
        assert_eq!(bank.with_params(&p).unwrap(), bank);
        assert!(bank.with_params(&p[1..]).is_err());
    }
}
