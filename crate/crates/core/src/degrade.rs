//! Parametric PSF synthesis and the Gaussian / Poisson degradation models.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Psf};
use crate::rng::SampleRng;
use crate::spectral::circular_convolve_spatial;

/// Gaussian noise levels of the Gaussian deblurring protocol.
pub const GAUSSIAN_STD_LEVELS: [f64; 5] = [0.001, 0.005, 0.01, 0.05, 0.1];
/// Peak intensities of the Poisson protocol.
pub const POISSON_PEAK_LEVELS: [f64; 6] = [1.0, 2.0, 5.0, 10.0, 25.0, 50.0];

/// First zero of the Bessel function J1.
const J1_FIRST_ZERO: f64 = 3.831_705_970_207_512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum PsfFamily {
    Gaussian { sigma: f64 },
    /// Airy intensity pattern whose first dark ring sits at `radius` pixels.
    Airy { radius: f64 },
    Box,
}

/// Family, odd side length and shape parameter of a synthetic PSF.
///
/// Written compactly as `gaussian:7:1.0`, `airy:9:2.5` or `box:5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsfSpec {
    #[serde(flatten)]
    pub family: PsfFamily,
    pub size: usize,
}

impl PsfSpec {
    pub fn gaussian(size: usize, sigma: f64) -> Self {
        Self {
            family: PsfFamily::Gaussian { sigma },
            size,
        }
    }

    pub fn airy(size: usize, radius: f64) -> Self {
        Self {
            family: PsfFamily::Airy { radius },
            size,
        }
    }

    pub fn boxcar(size: usize) -> Self {
        Self {
            family: PsfFamily::Box,
            size,
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            PsfFamily::Gaussian { .. } => "gaussian",
            PsfFamily::Airy { .. } => "airy",
            PsfFamily::Box => "box",
        }
    }

    pub fn param(&self) -> Option<f64> {
        match self.family {
            PsfFamily::Gaussian { sigma } => Some(sigma),
            PsfFamily::Airy { radius } => Some(radius),
            PsfFamily::Box => None,
        }
    }
}

impl fmt::Display for PsfSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.param() {
            Some(p) => write!(f, "{}:{}:{}", self.family_name(), self.size, p),
            None => write!(f, "{}:{}", self.family_name(), self.size),
        }
    }
}

impl FromStr for PsfSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let size = parts
            .get(1)
            .ok_or_else(|| Error::invalid(format!("psf {s:?} missing size")))?
            .parse::<usize>()
            .map_err(|e| Error::invalid(format!("psf {s:?}: bad size: {e}")))?;
        let param = |name: &str| -> Result<f64> {
            if parts.len() != 3 {
                return Err(Error::invalid(format!("psf {s:?}: expected family:size:{name}")));
            }
            parts[2]
                .parse::<f64>()
                .map_err(|e| Error::invalid(format!("psf {s:?}: bad {name}: {e}")))
        };
        let family = match parts[0] {
            "gaussian" => PsfFamily::Gaussian {
                sigma: param("sigma")?,
            },
            "airy" => PsfFamily::Airy {
                radius: param("radius")?,
            },
            "box" if parts.len() == 2 => PsfFamily::Box,
            other => {
                return Err(Error::invalid(format!(
                    "unknown psf {other:?} in {s:?}; expected gaussian:S:SIGMA, airy:S:RADIUS or box:S"
                )))
            }
        };
        Ok(PsfSpec { family, size })
    }
}

/// `J1(x)` from its integral form `(1/π)∫₀^π cos(τ − x sin τ) dτ` (composite Simpson).
pub fn bessel_j1(x: f64) -> f64 {
    const N: usize = 256;
    let h = std::f64::consts::PI / N as f64;
    let f = |t: f64| (t - x * t.sin()).cos();
    let mut s = f(0.0) + f(std::f64::consts::PI);
    for i in 1..N {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(i as f64 * h);
    }
    s * h / 3.0 / std::f64::consts::PI
}

/// Samples the family's profile on the grid, clamps negatives and normalizes to unit sum.
pub fn synthesize_psf(spec: &PsfSpec) -> Result<Psf> {
    let n = spec.size;
    if n == 0 || n.is_multiple_of(2) {
        return Err(Error::invalid(format!("psf size {n} must be odd")));
    }
    let c = (n / 2) as f64;
    let taps: Vec<f64> = match spec.family {
        PsfFamily::Gaussian { sigma } => {
            if !(sigma > 0.0) {
                return Err(Error::invalid("gaussian sigma must be positive"));
            }
            grid_profile(n, c, |r2| (-r2 / (2.0 * sigma * sigma)).exp())
        }
        PsfFamily::Airy { radius } => {
            if !(radius > 0.0) {
                return Err(Error::invalid("airy radius must be positive"));
            }
            grid_profile(n, c, |r2| {
                let v = J1_FIRST_ZERO * r2.sqrt() / radius;
                if v < 1e-8 {
                    1.0
                } else {
                    let a = 2.0 * bessel_j1(v) / v;
                    a * a
                }
            })
        }
        PsfFamily::Box => vec![1.0; n * n],
    };
    let taps: Vec<f64> = taps.into_iter().map(|t| t.max(0.0)).collect();
    Psf::normalized(n, n, taps)
}

fn grid_profile(n: usize, c: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let (di, dj) = (i as f64 - c, j as f64 - c);
            out.push(f(di * di + dj * dj));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Noise {
    /// Additive i.i.d. Gaussian; `std = 0` means noiseless.
    Gaussian { std: f64 },
    /// Scale to `peak` maximum intensity, blur, then draw Poisson counts.
    Poisson { peak: f64 },
}

impl Noise {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Noise::Gaussian { std } if !(0.0..=1.0).contains(&std) => {
                Err(Error::invalid(format!("gaussian std {std} outside [0, 1]")))
            }
            Noise::Poisson { peak } if !(peak > 0.0) || !peak.is_finite() => {
                Err(Error::invalid(format!("poisson peak {peak} must be positive")))
            }
            _ => Ok(()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Noise::Gaussian { .. } => "gaussian",
            Noise::Poisson { .. } => "poisson",
        }
    }

    pub fn level(&self) -> f64 {
        match *self {
            Noise::Gaussian { std } => std,
            Noise::Poisson { peak } => peak,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradeConfig {
    pub psf: PsfSpec,
    pub noise: Noise,
    pub seed: u64,
}

/// Rescales `x` so that its maximum equals `peak`.
pub fn scale_to_peak(x: &ImageGrid, peak: f64) -> ImageGrid {
    let m = x.max();
    if m > 0.0 {
        x.scale(peak / m)
    } else {
        ImageGrid::zeros(x.height(), x.width())
    }
}

/// Applies the degradation with an explicit PSF and generator.
pub fn degrade_with(x: &ImageGrid, psf: &Psf, noise: &Noise, rng: &mut SampleRng) -> Result<ImageGrid> {
    noise.validate()?;
    match *noise {
        Noise::Gaussian { std } => {
            let blurred = circular_convolve_spatial(x, psf.kernel())?;
            Ok(blurred.map(|v| v + std * rng.normal()))
        }
        Noise::Poisson { peak } => {
            if let Some(i) = x.as_slice().iter().position(|&v| v < 0.0) {
                return Err(Error::invalid(format!(
                    "poisson degradation needs nonnegative input, found {} at index {i}",
                    x.as_slice()[i]
                )));
            }
            let blurred = circular_convolve_spatial(&scale_to_peak(x, peak), psf.kernel())?;
            let counts = blurred
                .as_slice()
                .iter()
                .map(|&m| rng.poisson(m).map(|k| k as f64))
                .collect::<Result<Vec<_>>>()?;
            ImageGrid::new(x.height(), x.width(), counts)
        }
    }
}

/// `y = Kx + n` (Gaussian) or `y ~ P(K·scale(x))` (Poisson), seeded by `cfg.seed`.
pub fn degrade(x: &ImageGrid, cfg: &DegradeConfig) -> Result<ImageGrid> {
    let psf = synthesize_psf(&cfg.psf)?;
    let mut rng = SampleRng::new(cfg.seed);
    degrade_with(x, &psf, &cfg.noise, &mut rng)
}
