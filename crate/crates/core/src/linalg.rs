//! Regularized symmetric solves, RBF Gram matrices and span probes.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::{cholesky_in_place, cholesky_in_place_scratch};
use faer::linalg::cholesky::llt::solve::{solve_in_place, solve_in_place_scratch};
use faer::{Mat, MatMut, MatRef, Par, Side};

use crate::error::{Error, Result};
use crate::matrix::{clear_upper_state, gemm, norm, Matrix};

/// How a regularized solve was carried out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Cholesky,
    SpectralFallback,
}

/// Ridge shrinkage together with the factorization that served it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizedSolve {
    pub lambda: f64,
    pub method: SolveMethod,
}

const SYMMETRY_TOL: f64 = 1e-10;

/// Solves `(A + λI) Z = B` for symmetric `A`.
///
/// A Cholesky factorization is attempted first; when a pivot is not positive
/// the system is solved through the symmetric eigendecomposition instead.
pub fn spd_solve(a: &Matrix, lambda: f64, b: &Matrix) -> Result<Matrix> {
    spd_solve_with_method(a, lambda, b).map(|(z, _)| z)
}

pub fn spd_solve_with_method(a: &Matrix, lambda: f64, b: &Matrix) -> Result<(Matrix, RegularizedSolve)> {
    check_system(a, lambda, b)?;
    let mut shifted = a.clone();
    shifted.add_diagonal(lambda);
    if let Some(z) = cholesky_solve(&mut shifted, b) {
        return Ok((z, RegularizedSolve { lambda, method: SolveMethod::Cholesky }));
    }
    drop(shifted);
    let z = spectral_solve(a, lambda, b)?;
    Ok((z, RegularizedSolve { lambda, method: SolveMethod::SpectralFallback }))
}

fn check_system(a: &Matrix, lambda: f64, b: &Matrix) -> Result<()> {
    if a.rows() != a.cols() {
        return Err(Error::shape("spd_solve", "square matrix", format!("{}x{}", a.rows(), a.cols())));
    }
    if b.rows() != a.rows() {
        return Err(Error::shape("spd_solve", format!("{} right-hand-side rows", a.rows()), b.rows()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::param("lambda", format!("must be finite and >= 0, got {lambda}")));
    }
    let tolerance = SYMMETRY_TOL * a.max_abs();
    let deviation = a.asymmetry();
    if deviation > tolerance {
        return Err(Error::NotSymmetric { deviation, tolerance });
    }
    Ok(())
}

/// Factorizes `m` in place; `None` on a non-positive pivot.
fn cholesky_solve(m: &mut Matrix, b: &Matrix) -> Option<Matrix> {
    let n = m.rows();
    let par = Par::Seq;
    // symmetric, so the row-major buffer is also a valid column-major view
    let mut factor = MatMut::from_column_major_slice_mut(m.as_mut_slice(), n, n);
    let mut mem = MemBuffer::new(cholesky_in_place_scratch::<f64>(n, par, Default::default()));
    let factored = cholesky_in_place(factor.as_mut(), Default::default(), par, MemStack::new(&mut mem), Default::default());
    clear_upper_state();
    factored.ok()?;

    let mut rhs = Mat::<f64>::from_fn(n, b.cols(), |r, c| b.get(r, c));
    let mut mem = MemBuffer::new(solve_in_place_scratch::<f64>(n, b.cols(), par));
    solve_in_place(factor.as_ref(), rhs.as_mut(), par, MemStack::new(&mut mem));
    clear_upper_state();
    let z = Matrix::from_faer(rhs.as_ref());
    z.is_finite().then_some(z)
}

fn spectral_solve(a: &Matrix, lambda: f64, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    let view = MatRef::from_column_major_slice(a.as_slice(), n, n);
    let evd = view.self_adjoint_eigen(Side::Lower).map_err(|_| Error::Decomposition)?;
    clear_upper_state();
    let u = evd.U();
    let s = evd.S().column_vector();
    let shifted: Vec<f64> = (0..n).map(|i| s[i] + lambda).collect();
    let scale = shifted.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let smallest = shifted.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if smallest <= (n.max(1) as f64) * f64::EPSILON * scale {
        return Err(Error::Singular { eigenvalue: smallest });
    }
    // Z = U diag(1/(s+λ)) Uᵀ B
    let mut proj = Mat::<f64>::zeros(n, b.cols());
    gemm(proj.as_mut(), u.transpose(), b.view());
    for i in 0..n {
        let inv = 1.0 / shifted[i];
        for c in 0..b.cols() {
            proj[(i, c)] *= inv;
        }
    }
    let mut z = Matrix::zeros(n, b.cols());
    gemm(z.view_mut(), u, proj.as_ref());
    Ok(z)
}

/// RBF kernel matrix with entries `exp(-γ‖a_i - b_j‖²)`.
///
/// When `a` and `b` are the same matrix the result is exactly symmetric
/// with a unit diagonal.
pub fn gram_rbf(a: &Matrix, b: &Matrix, gamma: f64) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::shape("gram_rbf", format!("{} columns", a.cols()), b.cols()));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::param("gamma", format!("must be finite and > 0, got {gamma}")));
    }
    let same = std::ptr::eq(a, b) || a == b;
    let mut k = squared_distances(a, b, same);
    for v in k.as_mut_slice() {
        *v = (-gamma * *v).exp();
    }
    Ok(k)
}

/// Pairwise squared Euclidean distances, via the `‖a‖² + ‖b‖² - 2a·b`
/// expansion. Entries are clamped at zero; `same` forces an exactly
/// symmetric result with a zero diagonal.
pub fn squared_distances(a: &Matrix, b: &Matrix, same: bool) -> Matrix {
    let an: Vec<f64> = a.row_iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let bn: Vec<f64> = b.row_iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let mut d = a.matmul_t(b).expect("column counts checked by caller");
    let cols = d.cols();
    for (i, row) in d.as_mut_slice().chunks_mut(cols.max(1)).enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (an[i] + bn[j] - 2.0 * *v).max(0.0);
        }
    }
    if same {
        for i in 0..d.rows() {
            d.set(i, i, 0.0);
        }
        d.symmetrize_from_lower();
    }
    d
}

/// Singular values of `m`, largest first.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    if m.rows() == 0 || m.cols() == 0 {
        return Ok(Vec::new());
    }
    let mut s = m.view().singular_values().map_err(|_| Error::Decomposition)?;
    clear_upper_state();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Numerical rank with the usual `max(N, d)·ε·σ_max` cutoff.
pub fn rank(m: &Matrix) -> Result<usize> {
    let s = singular_values(m)?;
    let Some(&top) = s.first() else { return Ok(0) };
    let tol = (m.rows().max(m.cols()) as f64) * f64::EPSILON * top;
    Ok(s.iter().filter(|&&v| v > tol).count())
}

/// Norm of the component of `v` orthogonal to the column space of `basis`.
pub fn residual_orthogonality(v: &[f64], basis: &Matrix) -> Result<f64> {
    Ok(norm(&orthogonal_component(v, basis)?))
}

/// Component of `v` orthogonal to the column space of `basis`.
pub fn orthogonal_component(v: &[f64], basis: &Matrix) -> Result<Vec<f64>> {
    ColumnSpace::of(basis)?.orthogonal_component(v)
}

/// Orthonormal basis of a column space, taken from the thin SVD so
/// rank-deficient matrices are handled. Build once and reuse when several
/// vectors are projected against the same matrix.
#[derive(Debug, Clone)]
pub struct ColumnSpace {
    rows: usize,
    /// `rows × rank`, orthonormal columns.
    basis: Matrix,
}

impl ColumnSpace {
    pub fn of(m: &Matrix) -> Result<Self> {
        if m.cols() == 0 || m.rows() == 0 {
            return Ok(ColumnSpace { rows: m.rows(), basis: Matrix::zeros(m.rows(), 0) });
        }
        let svd = m.view().thin_svd().map_err(|_| Error::Decomposition)?;
        clear_upper_state();
        let u = svd.U();
        let s = svd.S().column_vector();
        let top = (0..s.nrows()).fold(0.0f64, |acc, i| acc.max(s[i]));
        let tol = (m.rows().max(m.cols()) as f64) * f64::EPSILON * top;
        let keep: Vec<usize> = (0..s.nrows()).filter(|&k| s[k] > tol).collect();
        let basis = Matrix::from_fn(m.rows(), keep.len(), |i, k| u[(i, keep[k])]);
        Ok(ColumnSpace { rows: m.rows(), basis })
    }

    pub fn rank(&self) -> usize {
        self.basis.cols()
    }

    pub fn orthogonal_component(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::shape("orthogonal_component", self.rows, v.len()));
        }
        let coef = self.basis.t_matvec(v)?;
        let proj = self.basis.matvec(&coef)?;
        Ok(v.iter().zip(proj).map(|(a, b)| a - b).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_plus_identity() {
        let z = spd_solve(&Matrix::identity(2), 1.0, &Matrix::identity(2)).unwrap();
        assert!(z.sub(&Matrix::identity(2).scale(0.5)).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn diagonal_without_shrinkage() {
        let a = Matrix::from_rows(&[[3.0, 0.0], [0.0, 1.0]]).unwrap();
        let b = Matrix::column(&[1.0, 1.0]).unwrap();
        let z = spd_solve(&a, 0.0, &b).unwrap();
        assert!((z.get(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((z.get(1, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn indefinite_falls_back_to_spectral() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        let b = Matrix::column(&[1.0, 0.0]).unwrap();
        let (z, how) = spd_solve_with_method(&a, 0.0, &b).unwrap();
        assert_eq!(how.method, SolveMethod::SpectralFallback);
        // inverse of [[1,2],[2,1]] is [[-1,2],[2,-1]]/3
        assert!((z.get(0, 0) + 1.0 / 3.0).abs() < 1e-12);
        assert!((z.get(1, 0) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn singular_without_shrinkage_is_reported() {
        let a = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let err = spd_solve(&a, 0.0, &Matrix::identity(2)).unwrap_err();
        match err {
            Error::Singular { eigenvalue } => assert!(eigenvalue < 1e-12),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn rejects_bad_shapes_and_asymmetry() {
        let rect = Matrix::zeros(2, 3);
        assert!(matches!(spd_solve(&rect, 1.0, &Matrix::zeros(2, 1)), Err(Error::Shape { .. })));
        let a = Matrix::from_rows(&[[1.0, 0.5], [0.4, 1.0]]).unwrap();
        assert!(matches!(spd_solve(&a, 1.0, &Matrix::zeros(2, 1)), Err(Error::NotSymmetric { .. })));
        assert!(matches!(spd_solve(&Matrix::identity(2), 1.0, &Matrix::zeros(3, 1)), Err(Error::Shape { .. })));
        assert!(spd_solve(&Matrix::identity(2), -1.0, &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn gram_unit_distance() {
        let a = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let k = gram_rbf(&a, &b, 1.0).unwrap();
        assert!((k.get(0, 0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!(gram_rbf(&a, &Matrix::zeros(1, 3), 1.0).is_err());
        assert!(gram_rbf(&a, &b, 0.0).is_err());
    }

    #[test]
    fn gram_self_has_exact_unit_diagonal() {
        let a = Matrix::from_fn(7, 3, |r, c| ((r * 3 + c) as f64).sin() * 4.0);
        let k = gram_rbf(&a, &a, 0.3).unwrap();
        for i in 0..7 {
            assert_eq!(k.get(i, i), 1.0);
        }
        assert_eq!(k.asymmetry(), 0.0);
    }

    #[test]
    fn orthogonality_probe() {
        let basis = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]).unwrap();
        assert!(residual_orthogonality(&[2.0, -1.0, 0.0], &basis).unwrap() < 1e-12);
        assert!((residual_orthogonality(&[0.0, 0.0, 1.0], &basis).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(residual_orthogonality(&[3.0, 4.0], &Matrix::zeros(2, 0)).unwrap(), 5.0);
    }

    #[test]
    fn rank_of_duplicated_columns() {
        let m = Matrix::from_fn(6, 3, |r, c| match c {
            1 => (r * r) as f64,
            _ => r as f64,
        });
        assert_eq!(rank(&m).unwrap(), 2);
    }
}
