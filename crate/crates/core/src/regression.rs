//! Single-module learners: ridge regression in primal or dual form, RBF
//! kernel ridge regression, one-hot targets and the argmax decision rule.

use crate::error::{Error, Result};
use crate::linalg::{gram_rbf, spd_solve};
use crate::matrix::{dot, squared_distance, Matrix};

/// One-hot target matrix together with the labels it encodes.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotTargets {
    matrix: Matrix,
    labels: Vec<usize>,
    class_count: usize,
}

impl OneHotTargets {
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Samples per class.
    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.class_count];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

pub fn encode_one_hot(labels: &[usize], class_count: usize) -> Result<OneHotTargets> {
    let mut matrix = Matrix::zeros(labels.len(), class_count);
    for (row, &label) in labels.iter().enumerate() {
        if label >= class_count {
            return Err(Error::Encoding { row, label, class_count });
        }
        matrix.set(row, label, 1.0);
    }
    Ok(OneHotTargets {
        matrix,
        labels: labels.to_vec(),
        class_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    /// `(XᵀX + λI)⁻¹XᵀY`, used when `N >= d`.
    Primal,
    /// `Xᵀ(XXᵀ + λI)⁻¹Y`, used when `N < d`.
    Dual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub weights: Matrix,
    pub lambda: f64,
    pub mode: SolveMode,
}

pub fn ridge_fit(x: &Matrix, y: &OneHotTargets, lambda: f64) -> Result<RidgeModel> {
    ridge_fit_targets(x, y.matrix(), lambda)
}

/// Ridge regression against an arbitrary real target matrix.
///
/// The primal system is used whenever `N >= d` (including `N == d`),
/// otherwise the dual.
pub fn ridge_fit_targets(x: &Matrix, y: &Matrix, lambda: f64) -> Result<RidgeModel> {
    let mode = if x.rows() >= x.cols() { SolveMode::Primal } else { SolveMode::Dual };
    ridge_fit_mode(x, y, lambda, mode)
}

/// Ridge regression through a fixed route. Both routes give the same
/// weights for `λ > 0`; the automatic choice only affects cost.
pub fn ridge_fit_mode(x: &Matrix, y: &Matrix, lambda: f64, mode: SolveMode) -> Result<RidgeModel> {
    if x.rows() != y.rows() {
        return Err(Error::shape("ridge_fit", format!("{} target rows", x.rows()), y.rows()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::param("lambda", format!("must be finite and >= 0, got {lambda}")));
    }
    let weights = match mode {
        SolveMode::Primal => spd_solve(&x.gram(), lambda, &x.t_matmul(y)?)?,
        SolveMode::Dual => x.t_matmul(&spd_solve(&x.outer_gram(), lambda, y)?)?,
    };
    Ok(RidgeModel { weights, lambda, mode })
}

impl RidgeModel {
    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }

    /// `Wᵀx`
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.weights.rows() {
            return Err(Error::shape("ridge_predict", self.weights.rows(), x.len()));
        }
        self.weights.t_matvec(x)
    }

    /// `XW` for a batch of row samples.
    pub fn predict_batch(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.weights.rows() {
            return Err(Error::shape("ridge_predict", self.weights.rows(), x.cols()));
        }
        x.matmul(&self.weights)
    }
}

pub fn ridge_predict(model: &RidgeModel, x: &[f64]) -> Result<Vec<f64>> {
    model.predict(x)
}

/// Index of the largest response; the lowest index wins ties.
pub fn classify(response: &[f64]) -> Result<usize> {
    if response.is_empty() {
        return Err(Error::param("response", "empty response vector"));
    }
    if let Some(index) = response.iter().position(|v| v.is_nan()) {
        return Err(Error::InvalidResponse { index });
    }
    let mut best = 0;
    for (i, &v) in response.iter().enumerate().skip(1) {
        if v > response[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Row-wise [`classify`].
pub fn classify_rows(responses: &Matrix) -> Result<Vec<usize>> {
    responses.row_iter().map(classify).collect()
}

/// Fraction of predictions equal to the labels.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrrModel {
    pub train_features: Matrix,
    /// `(K + λI)⁻¹Y`
    pub dual_coeffs: Matrix,
    pub gamma: f64,
    pub lambda: f64,
}

pub fn krr_fit(x: &Matrix, y: &OneHotTargets, lambda: f64, gamma: f64) -> Result<KrrModel> {
    krr_fit_targets(x, y.matrix(), lambda, gamma)
}

pub fn krr_fit_targets(x: &Matrix, y: &Matrix, lambda: f64, gamma: f64) -> Result<KrrModel> {
    if x.rows() != y.rows() {
        return Err(Error::shape("krr_fit", format!("{} target rows", x.rows()), y.rows()));
    }
    if !(lambda > 0.0) {
        return Err(Error::param("lambda", format!("must be > 0, got {lambda}")));
    }
    let k = gram_rbf(x, x, gamma)?;
    let dual_coeffs = spd_solve(&k, lambda, y)?;
    Ok(KrrModel {
        train_features: x.clone(),
        dual_coeffs,
        gamma,
        lambda,
    })
}

impl KrrModel {
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.train_features.cols() {
            return Err(Error::shape("krr_predict", self.train_features.cols(), x.len()));
        }
        let k: Vec<f64> = self
            .train_features
            .row_iter()
            .map(|t| (-self.gamma * squared_distance(x, t)).exp())
            .collect();
        self.dual_coeffs.t_matvec(&k)
    }

    pub fn predict_batch(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.train_features.cols() {
            return Err(Error::shape("krr_predict", self.train_features.cols(), x.cols()));
        }
        gram_rbf(x, &self.train_features, self.gamma)?.matmul(&self.dual_coeffs)
    }
}

pub fn krr_predict(model: &KrrModel, x: &[f64]) -> Result<Vec<f64>> {
    model.predict(x)
}

/// Ridge objective `‖Y - XW‖²_F + λ‖W‖²_F`.
pub fn ridge_objective(x: &Matrix, y: &Matrix, w: &Matrix, lambda: f64) -> Result<f64> {
    let residual = y.sub(&x.matmul(w)?)?;
    let fit = dot(residual.as_slice(), residual.as_slice());
    Ok(fit + lambda * dot(w.as_slice(), w.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_rows() {
        let t = encode_one_hot(&[0, 2, 1], 3).unwrap();
        assert_eq!(t.matrix().row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(t.matrix().row(1), &[0.0, 0.0, 1.0]);
        assert_eq!(t.matrix().row(2), &[0.0, 1.0, 0.0]);
        assert_eq!(encode_one_hot(&[0], 1).unwrap().matrix().row(0), &[1.0]);
        assert_eq!(encode_one_hot(&[1, 1, 1, 0], 2).unwrap().class_sizes(), vec![1, 3]);
    }

    #[test]
    fn one_hot_out_of_range_names_row() {
        match encode_one_hot(&[0, 1, 5], 3) {
            Err(Error::Encoding { row: 2, label: 5, class_count: 3 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ridge_on_identity() {
        let y = encode_one_hot(&[0, 1, 2], 3).unwrap();
        let m = ridge_fit(&Matrix::identity(3), &y, 1.0).unwrap();
        assert_eq!(m.mode, SolveMode::Primal);
        assert!(m.weights.sub(&Matrix::identity(3).scale(0.5)).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn ridge_predict_examples() {
        let m = RidgeModel {
            weights: Matrix::identity(2),
            lambda: 1.0,
            mode: SolveMode::Primal,
        };
        assert_eq!(m.predict(&[0.2, 0.8]).unwrap(), vec![0.2, 0.8]);
        assert_eq!(m.predict(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(m.predict(&[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(&[0.1, 0.9, 0.3]).unwrap(), 1);
        assert_eq!(classify(&[0.5, 0.5]).unwrap(), 0);
        assert!(matches!(classify(&[0.1, f64::NAN]), Err(Error::InvalidResponse { index: 1 })));
        assert!(classify(&[]).is_err());
    }

    #[test]
    fn krr_single_sample() {
        let x = Matrix::from_rows(&[[0.3, -0.2]]).unwrap();
        let y = encode_one_hot(&[1], 2).unwrap();
        let m = krr_fit(&x, &y, 1.0, 0.7).unwrap();
        let a = m.dual_coeffs.row(0);
        assert!(a[0] == 0.0 && (a[1] - 0.5).abs() < 1e-15);
        assert!(krr_fit(&x, &y, 0.0, 0.7).is_err());
        assert!(krr_fit(&x, &y, 1.0, -1.0).is_err());
    }

    #[test]
    fn krr_far_query_vanishes() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let y = encode_one_hot(&[0, 1], 2).unwrap();
        let m = krr_fit(&x, &y, 0.1, 1e6).unwrap();
        let r = m.predict(&[50.0, 50.0]).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-300));
        assert!(matches!(m.predict(&[1.0]), Err(Error::Shape { .. })));
    }
}
