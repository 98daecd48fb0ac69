mod common;

use common::*;
use num_complex::Complex64;
use proptest::prelude::*;
use wienerlab::rng::SampleRng;
use wienerlab::spectral::{
    circular_convolve_spatial, convolve_kernel, dct_basis, embed_kernel, fft2, ifft2,
    kernel_to_otf, CirculantOperator,
};
use wienerlab::{ImageGrid, Kernel};

fn dims() -> impl Strategy<Value = (usize, usize, u64)> {
    (1usize..12, 1usize..12, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fft_roundtrip((h, w, seed) in dims()) {
        let x = random_grid(h, w, &mut SampleRng::new(seed));
        let back = ifft2(&fft2(&x)).unwrap();
        prop_assert!(back.max_abs_diff(&x).unwrap() <= 1e-12 * x.max_abs().max(1.0));
    }

    #[test]
    fn parseval((h, w, seed) in dims()) {
        let x = random_grid(h, w, &mut SampleRng::new(seed));
        let energy: f64 = fft2(&x).power().iter().sum::<f64>() / (h * w) as f64;
        prop_assert!((energy - x.norm_sq()).abs() <= 1e-10 * x.norm_sq().max(1.0));
    }

    #[test]
    fn fft_matches_direct_dft((h, w, seed) in (1usize..7, 1usize..7, any::<u64>())) {
        let x = random_grid(h, w, &mut SampleRng::new(seed));
        let want = naive_dft(&x);
        let got = fft2(&x);
        for (a, b) in got.as_slice().iter().zip(&want) {
            prop_assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn fourier_convolution_matches_definition(
        h in 3usize..12, w in 3usize..12, kr in 0usize..2, kc in 0usize..2, seed in any::<u64>()
    ) {
        let (kr, kc) = (2 * kr + 1, 2 * kc + 1);
        let mut rng = SampleRng::new(seed);
        let x = random_grid(h, w, &mut rng);
        let k = random_kernel(kr, kc, &mut rng);
        let want = conv_direct(&x, &k);
        prop_assert!(convolve_kernel(&x, &k).unwrap().max_abs_diff(&want).unwrap() < 1e-11);
        prop_assert!(circular_convolve_spatial(&x, &k).unwrap().max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn otf_is_dft_of_rolled_kernel(h in 5usize..10, w in 5usize..10, seed in any::<u64>()) {
        // Pad the kernel, roll its center to the origin by hand, then take a direct DFT.
        let k = random_kernel(3, 5, &mut SampleRng::new(seed));
        let padded = ImageGrid::from_fn(h, w, |i, j| {
            let a = (i + 1) % h;
            let b = (j + 2) % w;
            if a < 3 && b < 5 { k.get(a, b) } else { 0.0 }
        });
        prop_assert_eq!(embed_kernel(&k, h, w).unwrap(), padded.clone());
        let want = naive_dft(&padded);
        for (a, b) in kernel_to_otf(&k, h, w).unwrap().as_slice().iter().zip(&want) {
            prop_assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn convolution_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = SampleRng::new(seed);
        let x = random_grid(9, 7, &mut rng);
        let y = random_grid(9, 7, &mut rng);
        let k = random_kernel(3, 3, &mut rng);
        let lhs = convolve_kernel(&x.axpby(a, &y, b).unwrap(), &k).unwrap();
        let rhs = convolve_kernel(&x, &k).unwrap().axpby(a, &convolve_kernel(&y, &k).unwrap(), b).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-11);
    }

    #[test]
    fn circulant_adjoint(seed in any::<u64>()) {
        let mut rng = SampleRng::new(seed);
        let u = random_grid(8, 11, &mut rng);
        let v = random_grid(8, 11, &mut rng);
        let op = CirculantOperator::from_kernel(&random_kernel(5, 3, &mut rng), 8, 11).unwrap();
        let lhs = op.apply(&u).unwrap().dot(&v).unwrap();
        let rhs = u.dot(&op.apply_adjoint(&v).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10 * u.norm() * v.norm());
    }
}

#[test]
fn dct_modes_are_orthonormal_and_zero_mean() {
    for size in [2usize, 3, 5] {
        let modes = dct_basis(size, size * size - 1).unwrap();
        for (i, a) in modes.iter().enumerate() {
            assert!(a.sum().abs() < 1e-12);
            for (j, b) in modes.iter().enumerate() {
                let dot: f64 = a.taps().iter().zip(b.taps()).map(|(p, q)| p * q).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12, "size {size} modes {i},{j}: {dot}");
            }
        }
    }
}

#[test]
fn first_dct_mode_varies_along_columns() {
    let m = &dct_basis(3, 1).unwrap()[0];
    let s = (1.0f64 / 3.0).sqrt() * (2.0f64 / 3.0).sqrt();
    let want = [
        s * (std::f64::consts::PI / 6.0).cos(),
        0.0,
        -s * (std::f64::consts::PI / 6.0).cos(),
    ];
    for r in 0..3 {
        for c in 0..3 {
            assert!((m.get(r, c) - want[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn delta_kernel_has_flat_spectrum() {
    let otf = kernel_to_otf(&Kernel::delta(3, 3), 6, 5).unwrap();
    for v in otf.as_slice() {
        assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }
}
