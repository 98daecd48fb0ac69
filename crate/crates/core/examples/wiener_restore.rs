//! Blur a synthetic specimen, add Gaussian noise, and restore it with the
//! default DCT bank over a few trade-off values.

use wienerlab::dataset::synthetic_specimen;
use wienerlab::degrade::{degrade, synthesize_psf, DegradeConfig, Noise, PsfSpec};
use wienerlab::metrics::{psnr, ssim};
use wienerlab::wiener::{wiener_solve, WienerPlan};
use wienerlab::KernelBank;

fn main() -> wienerlab::Result<()> {
    let truth = synthetic_specimen(128, 128, 1);
    let spec = PsfSpec::gaussian(9, 1.5);
    let y = degrade(
        &truth,
        &DegradeConfig {
            psf: spec,
            noise: Noise::Gaussian { std: 0.01 },
            seed: 7,
        },
    )?;
    let psf = synthesize_psf(&spec)?;
    println!("degraded   psnr {} ssim {:.4}", psnr(&y, &truth, 1.0)?, ssim(&y, &truth)?);

    for alpha in [-6.0, -4.0, -2.0, 0.0] {
        let bank = KernelBank::dct(8, 3, alpha)?;
        let plan = WienerPlan::new(&psf, &bank, 128, 128)?;
        let x = wiener_solve(&y, &plan)?;
        println!(
            "alpha {alpha:>4}  psnr {} ssim {:.4}",
            psnr(&x, &truth, 1.0)?,
            ssim(&x, &truth)?
        );
    }
    Ok(())
}
