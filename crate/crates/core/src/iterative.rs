//! Gradient-descent restoration with a pluggable prior gradient.
//!
//! ```text
//! x_{k+1} = x_k − β [Kᵀ(K x_k − y) + e^α f(x_k)]
//! ```
//!
//! starting from `x_0 = y`. `f` stands for `∇r`, the gradient of a regularizer.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Psf};
use crate::spectral::{convolve_kernel, CirculantOperator};
use crate::wiener::KernelBank;

/// Evaluator of `∇r(x)`.
pub trait PriorGradient: Send + Sync {
    fn gradient(&self, x: &ImageGrid) -> Result<ImageGrid>;

    /// `r(x)`, when the regularizer itself can be evaluated.
    fn energy(&self, _x: &ImageGrid) -> Option<Result<f64>> {
        None
    }
}

/// Names accepted by [`BuiltinPrior::parse`]. `tikhonov` takes a bank file.
pub const PRIOR_NAMES: [&str; 3] = ["none", "tikhonov:<bankfile>", "tv"];

/// Smoothing of the total-variation magnitude.
pub const TV_EPSILON: f64 = 1e-3;

/// The built-in stand-in priors.
#[derive(Debug, Clone)]
pub enum BuiltinPrior {
    /// `f ≡ 0`.
    Zero,
    /// `r(x) = ½ Σ_d ‖G_d x‖²`, `f(x) = Σ_d G_dᵀ G_d x`. The bank's own alpha is ignored.
    Tikhonov(KernelBank),
    /// `r(x) = Σ √(|∇x|² + ε²)` with periodic forward differences.
    SmoothedTv { eps: f64 },
}

impl BuiltinPrior {
    pub fn tv() -> Self {
        BuiltinPrior::SmoothedTv { eps: TV_EPSILON }
    }

    /// Parses `none`, `tv` or `tikhonov:<path>`; `load_bank` resolves the path.
    pub fn parse(
        spec: &str,
        load_bank: impl FnOnce(&str) -> Result<KernelBank>,
    ) -> Result<Self> {
        match spec {
            "none" => Ok(BuiltinPrior::Zero),
            "tv" => Ok(Self::tv()),
            s => match s.strip_prefix("tikhonov:") {
                Some(path) if !path.is_empty() => Ok(BuiltinPrior::Tikhonov(load_bank(path)?)),
                _ => Err(Error::invalid(format!(
                    "unknown prior {spec:?}; expected one of {}",
                    PRIOR_NAMES.join(", ")
                ))),
            },
        }
    }
}

/// Periodic forward differences `(x[i, j+1] − x[i, j], x[i+1, j] − x[i, j])`.
pub fn forward_diff(x: &ImageGrid) -> (ImageGrid, ImageGrid) {
    let (h, w) = x.dims();
    let dx = ImageGrid::from_fn(h, w, |i, j| x.get(i, (j + 1) % w) - x.get(i, j));
    let dy = ImageGrid::from_fn(h, w, |i, j| x.get((i + 1) % h, j) - x.get(i, j));
    (dx, dy)
}

/// Adjoint of [`forward_diff`] applied to a pair of fields and summed.
pub fn forward_diff_adjoint(px: &ImageGrid, py: &ImageGrid) -> ImageGrid {
    let (h, w) = px.dims();
    ImageGrid::from_fn(h, w, |i, j| {
        px.get(i, (j + w - 1) % w) - px.get(i, j) + py.get((i + h - 1) % h, j) - py.get(i, j)
    })
}

impl PriorGradient for BuiltinPrior {
    fn gradient(&self, x: &ImageGrid) -> Result<ImageGrid> {
        let (h, w) = x.dims();
        match self {
            BuiltinPrior::Zero => Ok(ImageGrid::zeros(h, w)),
            BuiltinPrior::Tikhonov(bank) => {
                let mut acc = ImageGrid::zeros(h, w);
                for g in bank.kernels() {
                    let op = CirculantOperator::from_kernel(g, h, w)?;
                    acc = acc.add(&op.apply_normal(x)?)?;
                }
                Ok(acc)
            }
            BuiltinPrior::SmoothedTv { eps } => {
                let (dx, dy) = forward_diff(x);
                let mut px = dx.clone();
                let mut py = dy.clone();
                for ((a, b), (u, v)) in px
                    .as_mut_slice()
                    .iter_mut()
                    .zip(py.as_mut_slice().iter_mut())
                    .zip(dx.as_slice().iter().zip(dy.as_slice()))
                {
                    let m = (u * u + v * v + eps * eps).sqrt();
                    *a = u / m;
                    *b = v / m;
                }
                Ok(forward_diff_adjoint(&px, &py))
            }
        }
    }

    fn energy(&self, x: &ImageGrid) -> Option<Result<f64>> {
        match self {
            BuiltinPrior::Zero => Some(Ok(0.0)),
            BuiltinPrior::Tikhonov(bank) => Some((|| {
                let mut e = 0.0;
                for g in bank.kernels() {
                    e += convolve_kernel(x, g)?.norm_sq();
                }
                Ok(0.5 * e)
            })()),
            BuiltinPrior::SmoothedTv { eps } => {
                let (dx, dy) = forward_diff(x);
                Some(Ok(dx
                    .as_slice()
                    .iter()
                    .zip(dy.as_slice())
                    .map(|(u, v)| (u * u + v * v + eps * eps).sqrt())
                    .sum()))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterConfig {
    pub steps: usize,
    pub beta: f64,
    pub alpha: f64,
}

impl Default for IterConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            beta: 0.2,
            alpha: 0.0,
        }
    }
}

impl IterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid("beta must be positive"));
        }
        if !self.alpha.is_finite() {
            return Err(Error::invalid("alpha must be finite"));
        }
        Ok(())
    }
}

/// Iterates whose norm exceeds this multiple of `‖y‖` abort the run.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    /// `½‖K x_k − y‖²`.
    pub fidelity: f64,
    /// `fidelity + e^α r(x_k)` when the prior can evaluate `r`.
    pub objective: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct IterResult {
    pub x: ImageGrid,
    /// Row 0 is the initial iterate, then one row per update.
    pub trace: Vec<TraceRow>,
}

impl IterResult {
    /// CSV with header `step,fidelity,objective`; the last column is empty when unknown.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("step,fidelity,objective\n");
        for row in &self.trace {
            let obj = row.objective.map(|o| o.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{}", row.step, row.fidelity, obj);
        }
        s
    }
}

/// Runs exactly `cfg.steps` descent updates from `x_0 = y`.
pub fn iterate(
    y: &ImageGrid,
    psf: &Psf,
    prior: &dyn PriorGradient,
    cfg: &IterConfig,
) -> Result<IterResult> {
    cfg.validate()?;
    let (h, w) = y.dims();
    let blur = CirculantOperator::from_psf(psf, h, w)?;
    let lambda = cfg.alpha.exp();
    let bound = DIVERGENCE_FACTOR * y.norm().max(f64::MIN_POSITIVE);

    let record = |step: usize, x: &ImageGrid| -> Result<TraceRow> {
        let fidelity = 0.5 * blur.apply(x)?.sub(y)?.norm_sq();
        let objective = match prior.energy(x) {
            Some(e) => Some(fidelity + lambda * e?),
            None => None,
        };
        Ok(TraceRow {
            step,
            fidelity,
            objective,
        })
    };

    let mut x = y.clone();
    let mut trace = vec![record(0, &x)?];
    for step in 1..=cfg.steps {
        let residual = blur.apply(&x)?.sub(y)?;
        let data_grad = blur.apply_adjoint(&residual)?;
        let prior_grad = prior.gradient(&x)?;
        prior_grad.check_same(&x)?;
        let grad = data_grad.axpby(1.0, &prior_grad, lambda)?;
        x = x.axpby(1.0, &grad, -cfg.beta)?;
        if !x.is_finite() {
            return Err(Error::NumericFailure(format!(
                "non-finite iterate at step {step}"
            )));
        }
        let norm = x.norm();
        if norm > bound {
            return Err(Error::Diverged { step, norm, bound });
        }
        trace.push(record(step, &x)?);
    }
    Ok(IterResult { x, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Kernel;
    use crate::rng::SampleRng;

    #[test]
    fn zero_prior_delta_psf_is_fixed_point() {
        let y = ImageGrid::from_fn(6, 6, |r, c| ((r * 3 + c) % 5) as f64 / 5.0);
        let cfg = IterConfig {
            steps: 4,
            beta: 1.0,
            alpha: 0.0,
        };
        let out = iterate(&y, &Psf::delta(), &BuiltinPrior::Zero, &cfg).unwrap();
        assert!(out.x.max_abs_diff(&y).unwrap() < 1e-12);
        assert_eq!(out.trace.len(), 5);
        assert!(out.trace.iter().all(|r| r.fidelity < 1e-24));
    }

    #[test]
    fn priors_vanish_on_constants() {
        let x = ImageGrid::filled(8, 8, 0.4);
        assert_eq!(BuiltinPrior::Zero.gradient(&x).unwrap().max_abs(), 0.0);
        let tik = BuiltinPrior::Tikhonov(KernelBank::default_bank());
        assert!(tik.gradient(&x).unwrap().max_abs() < 1e-12);
        assert!(BuiltinPrior::tv().gradient(&x).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn tv_gradient_matches_finite_differences() {
        let mut rng = SampleRng::new(8);
        let x = ImageGrid::from_fn(6, 6, |_, _| rng.uniform());
        let tv = BuiltinPrior::SmoothedTv { eps: 0.1 };
        let g = tv.gradient(&x).unwrap();
        let h = 1e-6;
        for idx in [0usize, 7, 20, 35] {
            let mut p = x.clone();
            p.as_mut_slice()[idx] += h;
            let mut m = x.clone();
            m.as_mut_slice()[idx] -= h;
            let fd = (tv.energy(&p).unwrap().unwrap() - tv.energy(&m).unwrap().unwrap()) / (2.0 * h);
            assert!((fd - g.as_slice()[idx]).abs() < 1e-6, "{fd} vs {}", g.as_slice()[idx]);
        }
    }

    #[test]
    fn parse_prior_names() {
        let none = BuiltinPrior::parse("none", |_| unreachable!()).unwrap();
        assert!(matches!(none, BuiltinPrior::Zero));
        assert!(matches!(BuiltinPrior::parse("tv", |_| unreachable!()).unwrap(), BuiltinPrior::SmoothedTv { .. }));
        let tik = BuiltinPrior::parse("tikhonov:b.wkb", |p| {
            assert_eq!(p, "b.wkb");
            Ok(KernelBank::default_bank())
        })
        .unwrap();
        assert!(matches!(tik, BuiltinPrior::Tikhonov(_)));
        assert!(BuiltinPrior::parse("unet", |_| unreachable!()).is_err());
        assert!(BuiltinPrior::parse("tikhonov:", |_| unreachable!()).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let y = ImageGrid::from_fn(8, 8, |r, c| ((r + c) % 2) as f64);
        let tik = BuiltinPrior::Tikhonov(KernelBank::new(vec![Kernel::delta(3, 3)], 0.0).unwrap());
        let cfg = IterConfig {
            steps: 200,
            beta: 5.0,
            alpha: 0.0,
        };
        let err = iterate(&y, &Psf::delta(), &tik, &cfg).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
    }

    #[test]
    fn trace_csv_layout() {
        let y = ImageGrid::filled(4, 4, 1.0);
        let out = iterate(&y, &Psf::delta(), &BuiltinPrior::Zero, &IterConfig { steps: 1, ..Default::default() }).unwrap();
        assert_eq!(out.trace_csv(), "step,fidelity,objective\n0,0,0\n1,0,0\n");
    }
}
