use wienerlab::gradients::{check_wiener_gradients, grad_alpha, grad_input, GradInstance, FD_STEP};
use wienerlab::rng::SampleRng;
use wienerlab::wiener::{wiener_solve, WienerPlan};
use wienerlab::ImageGrid;

#[test]
fn analytic_gradients_match_central_differences() {
    for (size, d, k, seed) in [(12, 2, 3, 1u64), (12, 1, 5, 2), (16, 4, 3, 3), (16, 2, 5, 4)] {
        let inst = GradInstance::random(size, d, k, seed).unwrap();
        let s = check_wiener_gradients(&inst, FD_STEP).unwrap();
        println!("{size} {d} {k} {seed}: {s:?}");
        assert!(s.max() < 1e-5, "{s:?}");
    }
}

#[test]
fn alpha_gradient_is_lambda_chain() {
    // ∂/∂α = λ·∂/∂λ: difference in λ directly.
    let inst = GradInstance::random(12, 2, 3, 9).unwrap();
    let plan = WienerPlan::new(&inst.psf, &inst.bank, 12, 12).unwrap();
    let ga = grad_alpha(&inst.y, &plan, &inst.upstream).unwrap();
    let lam = inst.bank.lambda();
    let eval = |l: f64| {
        let mut b = inst.bank.clone();
        b.set_alpha(l.ln());
        let p = WienerPlan::new(&inst.psf, &b, 12, 12).unwrap();
        wiener_solve(&inst.y, &p).unwrap().dot(&inst.upstream).unwrap()
    };
    let h = 1e-6 * lam;
    let dl = (eval(lam + h) - eval(lam - h)) / (2.0 * h);
    assert!((ga - lam * dl).abs() <= 1e-8 * ga.abs().max(1e-8), "{ga} vs {}", lam * dl);
}

#[test]
fn input_gradient_adjoint_consistency() {
    for seed in 0..20u64 {
        let inst = GradInstance::random(12, 2, 3, seed).unwrap();
        let plan = WienerPlan::new(&inst.psf, &inst.bank, 12, 12).unwrap();
        let gq = grad_input(&plan, &inst.upstream).unwrap();
        let mut rng = SampleRng::new(seed + 100);
        let v = ImageGrid::from_fn(12, 12, |_, _| rng.normal());
        // x̂ is linear in y, so J_y v = x̂(v).
        let jv = wiener_solve(&v, &plan).unwrap();
        let lhs = gq.dot(&v).unwrap();
        let rhs = inst.upstream.dot(&jv).unwrap();
        assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");
    }
}
