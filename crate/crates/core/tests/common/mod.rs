//! Shared generators and independent reference implementations for tests.
#![allow(dead_code)]

use num_complex::Complex64;
use wienerlab::rng::SampleRng;
use wienerlab::{ImageGrid, Kernel, KernelBank, Psf};

pub fn random_grid(h: usize, w: usize, rng: &mut SampleRng) -> ImageGrid {
    ImageGrid::from_fn(h, w, |_, _| rng.normal())
}

pub fn random_kernel(rows: usize, cols: usize, rng: &mut SampleRng) -> Kernel {
    Kernel::new(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

/// Positive, unit-sum PSF with random taps.
pub fn random_psf(size: usize, rng: &mut SampleRng) -> Psf {
    Psf::normalized(size, size, (0..size * size).map(|_| rng.uniform_in(0.05, 1.0)).collect())
        .unwrap()
}

pub fn random_bank(d: usize, k: usize, rng: &mut SampleRng) -> KernelBank {
    let kernels = (0..d).map(|_| random_kernel(k, k, rng)).collect();
    KernelBank::new(kernels, rng.uniform_in(-2.0, 1.0)).unwrap()
}

/// Direct O(N²) 2-D DFT with the forward sign convention `e^{-2πi(uy/H + vx/W)}`.
pub fn naive_dft(x: &ImageGrid) -> Vec<Complex64> {
    let (h, w) = x.dims();
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for u in 0..h {
        for v in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..h {
                for j in 0..w {
                    let phase = -2.0
                        * std::f64::consts::PI
                        * ((u * i) as f64 / h as f64 + (v * j) as f64 / w as f64);
                    acc += Complex64::from_polar(x.get(i, j), phase);
                }
            }
            out[u * w + v] = acc;
        }
    }
    out
}

/// Periodic convolution about the kernel center, written from the definition
/// `y[i, j] = Σ k[a, b] · x[i − (a − ca), j − (b − cb)]`.
pub fn conv_direct(x: &ImageGrid, k: &Kernel) -> ImageGrid {
    let (h, w) = x.dims();
    let (ca, cb) = ((k.rows() / 2) as isize, (k.cols() / 2) as isize);
    ImageGrid::from_fn(h, w, |i, j| {
        let mut acc = 0.0;
        for a in 0..k.rows() {
            for b in 0..k.cols() {
                let r = (i as isize - (a as isize - ca)).rem_euclid(h as isize) as usize;
                let c = (j as isize - (b as isize - cb)).rem_euclid(w as isize) as usize;
                acc += k.get(a, b) * x.get(r, c);
            }
        }
        acc
    })
}

/// Dense column-major matrix of a linear map on `h`×`w` grids, built from basis images.
pub fn dense(h: usize, w: usize, op: impl Fn(&ImageGrid) -> ImageGrid) -> Vec<Vec<f64>> {
    let n = h * w;
    let mut rows = vec![vec![0.0; n]; n];
    for col in 0..n {
        let mut e = ImageGrid::zeros(h, w);
        e.as_mut_slice()[col] = 1.0;
        let y = op(&e);
        for (row, v) in y.as_slice().iter().enumerate() {
            rows[row][col] = *v;
        }
    }
    rows
}

pub fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = a[0].len();
    (0..m).map(|j| (0..n).map(|i| a[i][j]).collect()).collect()
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for t in 0..k {
            let v = a[i][t];
            if v != 0.0 {
                for j in 0..m {
                    out[i][j] += v * b[t][j];
                }
            }
        }
    }
    out
}

pub fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum())
        .collect()
}

/// Gaussian elimination with partial pivoting.
pub fn solve_dense(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &v)| {
            let mut r = row.clone();
            r.push(v);
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            if f != 0.0 {
                for c in col..=n {
                    m[row][c] -= f * m[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| m[row][c] * x[c]).sum();
        x[row] = (m[row][n] - s) / m[row][row];
    }
    x
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
