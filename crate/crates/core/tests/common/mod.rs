#![allow(dead_code, clippy::needless_range_loop)]

use dan_core::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Plain triple-loop product, independent of the library's GEMM.
pub fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols(), b.rows());
    Matrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum())
}

pub fn naive_transpose(a: &Matrix) -> Matrix {
    Matrix::from_fn(a.cols(), a.rows(), |i, j| a.get(j, i))
}

pub fn plus_lambda(a: &Matrix, lambda: f64) -> Matrix {
    Matrix::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) + if i == j { lambda } else { 0.0 })
}

/// Gauss-Jordan inversion with full pivoting.
pub fn invert(a: &Matrix) -> Matrix {
    let n = a.rows();
    assert_eq!(n, a.cols());
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut col_perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let (mut pr, mut pc, mut best) = (k, k, 0.0);
        for i in k..n {
            for j in k..n {
                if m[i][j].abs() > best {
                    best = m[i][j].abs();
                    pr = i;
                    pc = j;
                }
            }
        }
        assert!(best > 0.0, "singular matrix in oracle");
        m.swap(k, pr);
        inv.swap(k, pr);
        if pc != k {
            for row in m.iter_mut() {
                row.swap(k, pc);
            }
            col_perm.swap(k, pc);
        }
        let piv = m[k][k];
        for j in 0..n {
            m[k][j] /= piv;
            inv[k][j] /= piv;
        }
        for i in 0..n {
            if i != k {
                let f = m[i][k];
                if f != 0.0 {
                    for j in 0..n {
                        m[i][j] -= f * m[k][j];
                        inv[i][j] -= f * inv[k][j];
                    }
                }
            }
        }
    }
    // Column swaps of A permute the rows of A⁻¹.
    let mut out = Matrix::zeros(n, n);
    for (k, &orig) in col_perm.iter().enumerate() {
        for j in 0..n {
            out.set(orig, j, inv[k][j]);
        }
    }
    out
}

pub fn rel_frobenius(a: &Matrix, b: &Matrix) -> f64 {
    let diff = a.sub(b).unwrap().frobenius_norm();
    diff / b.frobenius_norm().max(f64::MIN_POSITIVE)
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().max_abs()
}

/// Two unit Gaussian blobs centred at `∓sep/2` on every axis, labels alternating.
pub fn blobs(n: usize, d: usize, sep: f64, rng: &mut ChaCha8Rng) -> (Matrix, Vec<usize>) {
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = Matrix::from_fn(n, d, |r, _| {
        let z: f64 = StandardNormal.sample(rng);
        z + sep * (labels[r] as f64 - 0.5)
    });
    (x, labels)
}

/// XOR: four Gaussian clusters (σ = 0.3) at `(±1, ±1)`; opposite corners
/// share a class.
pub fn xor(n: usize, rng: &mut ChaCha8Rng) -> (Matrix, Vec<usize>) {
    const CORNERS: [(f64, f64); 4] = [(1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)];
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = CORNERS[i % 4];
        let za: f64 = StandardNormal.sample(rng);
        let zb: f64 = StandardNormal.sample(rng);
        rows.push([a + 0.3 * za, b + 0.3 * zb]);
        labels.push(usize::from(i % 4 >= 2));
    }
    (Matrix::from_rows(&rows).unwrap(), labels)
}

pub fn one_nn(train: &Matrix, labels: &[usize], query: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, row) in train.row_iter().enumerate() {
        let d: f64 = row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.0 {
            best = (d, labels[i]);
        }
    }
    best.1
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64, whole: f64, m: f64, fm: f64, tol: f64, depth: u32) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1) + recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 50)
}

pub fn gaussian_pdf(x: f64, sigma: f64) -> f64 {
    (-0.5 * (x / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}
