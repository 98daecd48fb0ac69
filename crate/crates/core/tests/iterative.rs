mod common;

use common::*;
use wienerlab::degrade::{synthesize_psf, PsfSpec};
use wienerlab::iterative::{forward_diff, forward_diff_adjoint, iterate, BuiltinPrior, IterConfig, PriorGradient};
use wienerlab::rng::SampleRng;
use wienerlab::wiener::{wiener_solve, WienerPlan};
use wienerlab::{Error, ImageGrid, Kernel, KernelBank, Psf};

/// Half-scaled forward differences: `Σ|D_G|² ≤ 2`, so β = 0.2 is a stable step.
pub fn gradient_bank() -> KernelBank {
    let gx = Kernel::new(3, 3, vec![0.0, 0.0, 0.0, 0.0, -0.5, 0.5, 0.0, 0.0, 0.0]).unwrap();
    let gy = Kernel::new(3, 3, vec![0.0, 0.0, 0.0, 0.0, -0.5, 0.0, 0.0, 0.5, 0.0]).unwrap();
    KernelBank::new(vec![gx, gy], 0.0).unwrap()
}

#[test]
fn tikhonov_prior_converges_to_closed_form() {
    let mut rng = SampleRng::new(17);
    let psf = synthesize_psf(&PsfSpec::gaussian(5, 0.8)).unwrap();
    let bank = gradient_bank();
    for _ in 0..3 {
        let y = ImageGrid::from_fn(12, 12, |_, _| rng.uniform());
        let cfg = IterConfig {
            steps: 500,
            beta: 0.2,
            alpha: 0.0,
        };
        let out = iterate(&y, &psf, &BuiltinPrior::Tikhonov(bank.clone()), &cfg).unwrap();
        let want = wiener_solve(&y, &WienerPlan::new(&psf, &bank, 12, 12).unwrap()).unwrap();
        let err = out.x.max_abs_diff(&want).unwrap();
        assert!(err < 1e-4, "{err}");
        // Gradient descent on a convex quadratic with a stable step never increases it.
        let obj: Vec<f64> = out.trace.iter().map(|r| r.objective.unwrap()).collect();
        assert!(obj.windows(2).all(|p| p[1] <= p[0] + 1e-12));
    }
}

#[test]
fn tv_descent_lowers_the_objective() {
    let mut rng = SampleRng::new(3);
    let psf = synthesize_psf(&PsfSpec::gaussian(3, 0.7)).unwrap();
    let y = ImageGrid::from_fn(16, 16, |i, j| if (i / 4 + j / 4) % 2 == 0 { 0.8 } else { 0.2 } + 0.05 * rng.normal());
    let cfg = IterConfig {
        steps: 30,
        beta: 1e-3,
        alpha: -3.0,
    };
    let out = iterate(&y, &psf, &BuiltinPrior::tv(), &cfg).unwrap();
    let first = out.trace[0].objective.unwrap();
    let last = out.trace.last().unwrap().objective.unwrap();
    assert!(last < first, "{last} >= {first}");
}

#[test]
fn forward_diff_adjoint_identity() {
    let mut rng = SampleRng::new(1);
    for (h, w) in [(5, 7), (8, 3), (1, 6)] {
        let x = random_grid(h, w, &mut rng);
        let px = random_grid(h, w, &mut rng);
        let py = random_grid(h, w, &mut rng);
        let (dx, dy) = forward_diff(&x);
        let lhs = dx.dot(&px).unwrap() + dy.dot(&py).unwrap();
        let rhs = x.dot(&forward_diff_adjoint(&px, &py)).unwrap();
        assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }
}

#[test]
fn tikhonov_gradient_is_gradient_of_energy() {
    let mut rng = SampleRng::new(12);
    let prior = BuiltinPrior::Tikhonov(random_bank(3, 3, &mut rng));
    let x = random_grid(7, 6, &mut rng);
    let g = prior.gradient(&x).unwrap();
    let step = 1e-6;
    for idx in [0usize, 13, 41] {
        let mut xp = x.clone();
        xp.as_mut_slice()[idx] += step;
        let mut xm = x.clone();
        xm.as_mut_slice()[idx] -= step;
        let fd = (prior.energy(&xp).unwrap().unwrap() - prior.energy(&xm).unwrap().unwrap()) / (2.0 * step);
        assert!((fd - g.as_slice()[idx]).abs() < 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", g.as_slice()[idx]);
    }
}

struct Scaled(f64);

impl PriorGradient for Scaled {
    fn gradient(&self, x: &ImageGrid) -> wienerlab::Result<ImageGrid> {
        Ok(x.scale(self.0))
    }
}

#[test]
fn custom_prior_plugs_in() {
    // f(x) = c·x with a delta PSF: x_{k+1} = x_k − β[(x_k − y) + c x_k], fixed point y/(1+c).
    let y = ImageGrid::filled(4, 4, 1.0);
    let cfg = IterConfig {
        steps: 200,
        beta: 0.5,
        alpha: 0.0,
    };
    let out = iterate(&y, &Psf::delta(), &Scaled(1.0), &cfg).unwrap();
    assert!(out.x.max_abs_diff(&ImageGrid::filled(4, 4, 0.5)).unwrap() < 1e-12);
    assert!(out.trace.iter().all(|r| r.objective.is_none()));
}

#[test]
fn oversized_step_diverges_with_step_number() {
    let y = ImageGrid::from_fn(6, 6, |i, j| ((i + j) % 2) as f64);
    let cfg = IterConfig {
        steps: 200,
        beta: 3.0,
        alpha: 0.0,
    };
    match iterate(&y, &Psf::delta(), &BuiltinPrior::Zero, &cfg) {
        Err(Error::Diverged { step, .. }) => assert!(step > 1 && step < 200),
        other => panic!("{other:?}"),
    }
}
