mod common;

use common::*;
use proptest::prelude::*;
use wienerlab::rng::SampleRng;
use wienerlab::spatial_cg::{
    apply_g, apply_g_adjoint, conjugate_gradient, solve_sa, CgConfig, PixelKernelField, SaOperator,
};
use wienerlab::wiener::{wiener_solve, WienerPlan};
use wienerlab::{ImageGrid, KernelBank};

fn random_field(h: usize, w: usize, k: usize, rng: &mut SampleRng) -> PixelKernelField {
    PixelKernelField::from_fn(h, w, k, |_, _, _, _| rng.normal()).unwrap()
}

/// `Gx` from its definition with signed offsets.
fn g_direct(x: &ImageGrid, f: &PixelKernelField) -> ImageGrid {
    let (h, w) = x.dims();
    let k = f.k();
    let c = (k / 2) as isize;
    ImageGrid::from_fn(h, w, |i, j| {
        let kern = f.kernel_at(i, j);
        let mut acc = 0.0;
        for a in 0..k {
            for b in 0..k {
                let r = (i as isize + a as isize - c).rem_euclid(h as isize) as usize;
                let s = (j as isize + b as isize - c).rem_euclid(w as isize) as usize;
                acc += kern[a * k + b] * x.get(r, s);
            }
        }
        acc
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn g_matches_definition(h in 3usize..10, w in 3usize..10, seed in any::<u64>()) {
        let mut rng = SampleRng::new(seed);
        let k = if h.min(w) >= 5 { 5 } else { 3 };
        let f = random_field(h, w, k, &mut rng);
        let x = random_grid(h, w, &mut rng);
        prop_assert!(apply_g(&x, &f).unwrap().max_abs_diff(&g_direct(&x, &f)).unwrap() < 1e-12);
    }

    #[test]
    fn g_adjoint_identity(h in 3usize..12, w in 3usize..12, seed in any::<u64>()) {
        let mut rng = SampleRng::new(seed);
        let f = random_field(h, w, 3, &mut rng);
        let u = random_grid(h, w, &mut rng);
        let v = random_grid(h, w, &mut rng);
        let lhs = apply_g(&u, &f).unwrap().dot(&v).unwrap();
        let rhs = u.dot(&apply_g_adjoint(&v, &f).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10 * u.norm() * v.norm());
    }

    #[test]
    fn system_operator_is_symmetric_positive(seed in any::<u64>()) {
        let mut rng = SampleRng::new(seed);
        let psf = random_psf(3, &mut rng);
        let f = random_field(7, 6, 3, &mut rng);
        let op = SaOperator::new(&psf, &f, rng.uniform_in(-2.0, 2.0)).unwrap();
        let u = random_grid(7, 6, &mut rng);
        let v = random_grid(7, 6, &mut rng);
        let a = op.apply(&u).unwrap().dot(&v).unwrap();
        let b = u.dot(&op.apply(&v).unwrap()).unwrap();
        prop_assert!((a - b).abs() < 1e-10 * u.norm() * v.norm());
        prop_assert!(u.dot(&op.apply(&u).unwrap()).unwrap() > 0.0);
    }
}

#[test]
fn constant_field_matches_closed_form() {
    let mut rng = SampleRng::new(21);
    for &(h, w) in &[(8usize, 8usize), (12, 9), (16, 16), (32, 32)] {
        let psf = random_psf(5, &mut rng);
        let g = random_kernel(3, 3, &mut rng);
        let alpha = -1.0;
        let y = random_grid(h, w, &mut rng);
        let field = PixelKernelField::constant(h, w, &g).unwrap();
        let sol = solve_sa(&y, &psf, &field, alpha, &CgConfig::default()).unwrap();
        assert!(sol.report.converged, "{:?}", sol.report.residual);
        let bank = KernelBank::new(vec![g], alpha).unwrap();
        let want = wiener_solve(&y, &WienerPlan::new(&psf, &bank, h, w).unwrap()).unwrap();
        let err = sol.x.max_abs_diff(&want).unwrap();
        assert!(err < 1e-5, "{h}x{w}: {err}");
    }
}

#[test]
fn varying_field_matches_dense_solve() {
    let mut rng = SampleRng::new(4);
    let (h, w) = (6, 7);
    let psf = random_psf(3, &mut rng);
    let f = random_field(h, w, 3, &mut rng);
    let alpha: f64 = 0.3;
    let y = random_grid(h, w, &mut rng);
    let km = dense(h, w, |e| conv_direct(e, psf.kernel()));
    let gm = dense(h, w, |e| g_direct(e, &f));
    let mut a = matmul(&transpose(&km), &km);
    let gtg = matmul(&transpose(&gm), &gm);
    for (ra, rg) in a.iter_mut().zip(&gtg) {
        for (p, q) in ra.iter_mut().zip(rg) {
            *p += alpha.exp() * q;
        }
    }
    let b = matvec(&transpose(&km), y.as_slice());
    let want = solve_dense(&a, &b);
    let cfg = CgConfig {
        rel_tol: 1e-12,
        ..Default::default()
    };
    let sol = solve_sa(&y, &psf, &f, alpha, &cfg).unwrap();
    assert!(max_abs_diff(sol.x.as_slice(), &want) < 1e-8);
}

#[test]
fn residual_history_is_monotone_and_ends_at_report() {
    let mut rng = SampleRng::new(9);
    let psf = random_psf(5, &mut rng);
    let f = random_field(16, 16, 3, &mut rng);
    let y = random_grid(16, 16, &mut rng);
    let sol = solve_sa(&y, &psf, &f, -2.0, &CgConfig::default()).unwrap();
    let hist = &sol.report.residual_history;
    assert_eq!(hist.len(), sol.report.iterations + 1);
    assert!(hist.windows(2).all(|p| p[1] <= p[0]));
    assert!(sol.report.converged);
    // Recomputed residual agrees with the recurrence up to round-off.
    let last = *hist.last().unwrap();
    assert!((sol.report.residual - last).abs() < 1e-6 * hist[0]);
}

#[test]
fn cg_solves_a_diagonal_system_in_distinct_eigenvalue_count_steps() {
    // A with three distinct eigenvalues: exact in three steps.
    let d = ImageGrid::from_fn(4, 4, |i, _| [1.0, 2.0, 5.0, 5.0][i]);
    let b = ImageGrid::filled(4, 4, 1.0);
    let apply = |x: &ImageGrid| {
        ImageGrid::new(4, 4, x.as_slice().iter().zip(d.as_slice()).map(|(p, q)| p * q).collect())
    };
    let sol = conjugate_gradient(apply, &b, &CgConfig::default()).unwrap();
    assert!(sol.report.iterations <= 3);
    for (x, q) in sol.x.as_slice().iter().zip(d.as_slice()) {
        assert!((x - 1.0 / q).abs() < 1e-10);
    }
}
