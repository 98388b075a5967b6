//! Kernel deep analytic network: each layer is an RBF kernel ridge
//! regression in the dual, stacked exactly as in [`crate::dan`].

use crate::dan::{check_beta, check_lambda, check_validation, layer_report, layer_width, relu, FineTune, Forward, LayerReport, ReportKind, StackTrace, Validation};
use crate::error::{Error, Result};
use crate::linalg::{gram_rbf, spd_solve};
use crate::matrix::Matrix;
use crate::regression::{classify_rows, OneHotTargets};

/// Query rows per kernel block at inference time.
pub const FORWARD_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct KdanConfig {
    pub depth: usize,
    pub lambda_layer: f64,
    pub gamma_layer: f64,
    pub lambda_ft: f64,
    pub beta_ft: f64,
    /// Drop the FT layer and classify from `p^(L)`.
    pub trim: bool,
}

impl Default for KdanConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            lambda_layer: 0.01,
            gamma_layer: 0.1,
            lambda_ft: 0.01,
            beta_ft: 0.5,
            trim: true,
        }
    }
}

impl KdanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::param("depth", "must be at least 1"));
        }
        if !(self.lambda_layer > 0.0) || !self.lambda_layer.is_finite() {
            return Err(Error::param("lambda_layer", format!("must be finite and > 0, got {}", self.lambda_layer)));
        }
        if !(self.gamma_layer > 0.0) || !self.gamma_layer.is_finite() {
            return Err(Error::param("gamma_layer", format!("must be finite and > 0, got {}", self.gamma_layer)));
        }
        if !self.trim {
            check_lambda("lambda_ft", self.lambda_ft)?;
            check_beta(self.beta_ft)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdanModel {
    /// Training stack `H^(L)`. Layer ℓ's stored stack is its leading
    /// `d + N_c(ℓ-1)` columns.
    pub stack: Matrix,
    /// `(K^(ℓ) + λI)⁻¹Y` per layer.
    pub dual_coeffs: Vec<Matrix>,
    pub ft: Option<FineTune>,
    pub config: KdanConfig,
    pub input_dim: usize,
    pub class_count: usize,
}

pub fn kdan_fit(
    x: &Matrix,
    y: &OneHotTargets,
    config: &KdanConfig,
    validation: Option<Validation<'_>>,
) -> Result<(KdanModel, Vec<LayerReport>)> {
    config.validate()?;
    if x.rows() == 0 {
        return Err(Error::param("x", "no training samples"));
    }
    if x.rows() != y.len() {
        return Err(Error::shape("kdan_fit", format!("{} target rows", x.rows()), y.len()));
    }
    let n_c = y.class_count();
    if let Some(v) = &validation {
        check_validation(v, x.cols(), n_c)?;
    }

    let mut dual_coeffs = Vec::with_capacity(config.depth);
    let mut reports = Vec::with_capacity(config.depth + 1);
    let mut h = x.clone();
    let mut h_val = validation.map(|v| v.features.clone());
    let mut last_stack = None;
    for layer in 1..=config.depth {
        let (alpha, p) = {
            let k = gram_rbf(&h, &h, config.gamma_layer).map_err(|e| e.at_layer(layer))?;
            let alpha = spd_solve(&k, config.lambda_layer, y.matrix()).map_err(|e| e.at_layer(layer))?;
            let p = k.matmul(&alpha)?;
            (alpha, p)
        };
        let p_val = match &h_val {
            Some(hv) => Some(kernel_response(hv, &h, &alpha, config.gamma_layer)?),
            None => None,
        };
        let val = p_val.as_ref().zip(validation).map(|(p, v)| (p, v.labels));
        reports.push(layer_report(layer, ReportKind::Layer, &p, y, Some(&h), val)?);

        let q = relu(&p);
        let next = Matrix::hstack(&[&h, &q])?;
        if layer == config.depth {
            last_stack = Some(std::mem::replace(&mut h, next));
        } else {
            h = next;
        }
        if let (Some(hv), Some(pv)) = (h_val.as_mut(), p_val) {
            *hv = Matrix::hstack(&[hv, &relu(&pv)])?;
        }
        dual_coeffs.push(alpha);
    }

    let ft = if config.trim {
        None
    } else {
        let q_all = h.col_range(x.cols(), h.cols());
        let (ft, response) = FineTune::fit(&q_all, y, config.lambda_ft, config.beta_ft, true, false)
            .map_err(|e| e.at_layer(config.depth + 1))?;
        let val_response = match &h_val {
            Some(hv) => Some(ft.respond(&FineTune::features(&hv.col_range(x.cols(), hv.cols()), ft.beta, true)?)?),
            None => None,
        };
        let val = val_response.as_ref().zip(validation).map(|(p, v)| (p, v.labels));
        reports.push(layer_report(config.depth + 1, ReportKind::FineTune, &response, y, None, val)?);
        Some(ft)
    };

    let model = KdanModel {
        stack: last_stack.expect("depth >= 1"),
        dual_coeffs,
        ft,
        config: config.clone(),
        input_dim: x.cols(),
        class_count: n_c,
    };
    Ok((model, reports))
}

/// `k(queries, train)·α`, evaluated in row blocks to bound memory.
fn kernel_response(queries: &Matrix, train: &Matrix, alpha: &Matrix, gamma: f64) -> Result<Matrix> {
    if queries.rows() <= FORWARD_CHUNK {
        return gram_rbf(queries, train, gamma)?.matmul(alpha);
    }
    let mut blocks = Vec::new();
    for start in (0..queries.rows()).step_by(FORWARD_CHUNK) {
        let end = (start + FORWARD_CHUNK).min(queries.rows());
        blocks.push(gram_rbf(&queries.row_range(start, end), train, gamma)?.matmul(alpha)?);
    }
    Matrix::vstack(&blocks.iter().collect::<Vec<_>>())
}

impl KdanModel {
    pub fn depth(&self) -> usize {
        self.dual_coeffs.len()
    }

    pub fn training_len(&self) -> usize {
        self.stack.rows()
    }

    /// Stored training stack of 1-based layer `layer`.
    pub fn layer_stack(&self, layer: usize) -> Matrix {
        self.stack.leading_cols(layer_width(self.input_dim, self.class_count, layer))
    }

    pub fn forward_batch(&self, x: &Matrix) -> Result<Forward> {
        if x.cols() != self.input_dim {
            return Err(Error::shape("kdan_forward", self.input_dim, x.cols()));
        }
        let stacks: Vec<Matrix> = (1..=self.depth()).map(|l| self.layer_stack(l)).collect();
        let mut h = x.clone();
        let mut responses = Vec::with_capacity(self.depth());
        for (train, alpha) in stacks.iter().zip(&self.dual_coeffs) {
            let p = kernel_response(&h, train, alpha, self.config.gamma_layer)?;
            h = Matrix::hstack(&[&h, &relu(&p)])?;
            responses.push(p);
        }
        let trace = StackTrace {
            stack: h,
            responses,
            input_dim: self.input_dim,
            class_count: self.class_count,
        };
        let response = match &self.ft {
            Some(ft) => ft.respond(&FineTune::features(&trace.relearned_all(), ft.beta, true)?)?,
            None => trace.responses.last().expect("depth >= 1").clone(),
        };
        Ok(Forward { trace, response })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let out = self.forward_batch(&Matrix::new(1, x.len(), x.to_vec())?)?;
        Ok(out.response.into_vec())
    }

    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        crate::regression::classify(&self.forward(x)?)
    }

    pub fn classify_batch(&self, x: &Matrix) -> Result<Vec<usize>> {
        classify_rows(&self.forward_batch(x)?.response)
    }
}

pub fn kdan_forward(model: &KdanModel, x: &[f64]) -> Result<Vec<f64>> {
    model.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::encode_one_hot;

    #[test]
    fn stored_stack_obeys_width_law() {
        let x = Matrix::from_fn(15, 4, |r, c| ((r * 5 + c * 2) % 7) as f64 * 0.3);
        let labels: Vec<usize> = (0..15).map(|i| i % 3).collect();
        let y = encode_one_hot(&labels, 3).unwrap();
        let cfg = KdanConfig { depth: 3, trim: false, ..Default::default() };
        let (m, reports) = kdan_fit(&x, &y, &cfg, None).unwrap();
        assert_eq!(m.stack.cols(), 4 + 3 * 2);
        assert_eq!(m.layer_stack(1).cols(), 4);
        assert_eq!(m.ft.as_ref().unwrap().weights.rows(), 9);
        assert_eq!(reports.len(), 4);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(KdanConfig { gamma_layer: 0.0, ..Default::default() }.validate().is_err());
        assert!(KdanConfig { lambda_layer: 0.0, ..Default::default() }.validate().is_err());
        assert!(KdanConfig { beta_ft: 2.0, trim: true, ..Default::default() }.validate().is_ok());
        assert!(KdanConfig { beta_ft: 2.0, trim: false, ..Default::default() }.validate().is_err());
    }
}
