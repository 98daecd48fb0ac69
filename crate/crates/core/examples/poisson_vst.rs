//! Low-light restoration: Anscombe transform, Wiener filter, exact unbiased
//! inverse, next to direct filtering of the scaled counts. Each pipeline gets
//! its best trade-off from a small grid (chosen against the truth, so this is
//! an upper bound for both).

use wienerlab::dataset::synthetic_specimen;
use wienerlab::degrade::{degrade, synthesize_psf, DegradeConfig, Noise, PsfSpec};
use wienerlab::metrics::psnr;
use wienerlab::vst::{anscombe, exact_unbiased_inverse};
use wienerlab::wiener::{wiener_solve, WienerPlan};
use wienerlab::{ImageGrid, KernelBank, Psf, Result};

fn best(truth: &ImageGrid, psf: &Psf, restore: impl Fn(&WienerPlan) -> Result<ImageGrid>) -> Result<(f64, f64)> {
    let mut top = (f64::NAN, f64::NEG_INFINITY);
    for a in -8..=2 {
        let bank = KernelBank::dct(8, 3, a as f64)?;
        let x = restore(&WienerPlan::new(psf, &bank, truth.height(), truth.width())?)?;
        let db = psnr(&x, truth, 1.0)?.db().unwrap_or(f64::INFINITY);
        if db > top.1 {
            top = (a as f64, db);
        }
    }
    Ok(top)
}

fn main() -> Result<()> {
    let truth = synthetic_specimen(96, 96, 11);
    let spec = PsfSpec::gaussian(5, 1.0);
    let psf = synthesize_psf(&spec)?;
    for peak in [1.0, 5.0, 25.0] {
        let counts = degrade(
            &truth,
            &DegradeConfig {
                psf: spec,
                noise: Noise::Poisson { peak },
                seed: 3,
            },
        )?;
        let scaled = counts.scale(1.0 / peak);
        let z = anscombe(&counts)?;
        let (a_d, direct) = best(&truth, &psf, |plan| wiener_solve(&scaled, plan))?;
        let (a_v, vst) = best(&truth, &psf, |plan| {
            let zr = wiener_solve(&z, plan)?.map(|v| v.max(f64::MIN_POSITIVE));
            Ok(exact_unbiased_inverse(&zr)?.scale(1.0 / peak))
        })?;
        println!(
            "peak {peak:>4}: input {}  direct {direct:.2} (alpha {a_d})  vst {vst:.2} (alpha {a_v})",
            psnr(&scaled, &truth, 1.0)?
        );
    }
    Ok(())
}
