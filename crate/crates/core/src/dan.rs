//! Deep analytic network: ridge modules stacked on the raw input plus every
//! earlier layer's relearned features, closed by an optional fine-tuning
//! ridge layer over the power-regularized relearned features.

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};
use crate::regression::{accuracy, classify_rows, encode_one_hot, ridge_fit_targets, OneHotTargets, SolveMode};
use crate::theory::class_distances;

/// Pairs drawn per class relation when layer reports estimate distances.
pub const REPORT_DISTANCE_PAIRS: usize = 1000;
const REPORT_DISTANCE_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FtClassifier {
    Regression,
    /// Exact 1-NN over the stored training FT features.
    NearestNeighbor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DanConfig {
    pub depth: usize,
    pub lambda_layer: f64,
    /// Per-layer overrides of `lambda_layer`; empty means shared.
    pub layer_lambdas: Vec<f64>,
    pub lambda_ft: f64,
    pub beta_ft: f64,
    pub relu_enabled: bool,
    pub ft_enabled: bool,
    pub ft_classifier: FtClassifier,
}

impl Default for DanConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            lambda_layer: 1.0,
            layer_lambdas: Vec::new(),
            lambda_ft: 1e-5,
            beta_ft: 0.5,
            relu_enabled: true,
            ft_enabled: true,
            ft_classifier: FtClassifier::Regression,
        }
    }
}

pub(crate) fn check_lambda(name: &'static str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::param(name, format!("must be finite and >= 0, got {v}")));
    }
    Ok(())
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::param("beta_ft", format!("must lie in [0, 1], got {beta}")));
    }
    Ok(())
}

impl DanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::param("depth", "must be at least 1"));
        }
        check_lambda("lambda_layer", self.lambda_layer)?;
        if !self.layer_lambdas.is_empty() && self.layer_lambdas.len() != self.depth {
            return Err(Error::param(
                "layer_lambdas",
                format!("expected {} entries, got {}", self.depth, self.layer_lambdas.len()),
            ));
        }
        for &l in &self.layer_lambdas {
            check_lambda("layer_lambdas", l)?;
        }
        check_lambda("lambda_ft", self.lambda_ft)?;
        check_beta(self.beta_ft)?;
        if self.ft_classifier == FtClassifier::NearestNeighbor && !self.ft_enabled {
            return Err(Error::param("ft_classifier", "nearest-neighbor classification needs the FT layer"));
        }
        Ok(())
    }

    /// λ used at 1-based layer `layer`.
    pub fn lambda_at(&self, layer: usize) -> f64 {
        self.layer_lambdas.get(layer - 1).copied().unwrap_or(self.lambda_layer)
    }
}

/// Input width of 1-based layer `layer`: `d + N_c(ℓ-1)`.
pub fn layer_width(input_dim: usize, class_count: usize, layer: usize) -> usize {
    input_dim + class_count * (layer - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Layer,
    FineTune,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    /// 1-based; the FT entry carries `L + 1`.
    pub layer_index: usize,
    pub kind: ReportKind,
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
    /// `‖Ŷ - Y‖_F` on the training rows.
    pub train_residual: f64,
    /// Intra/interclass distances of the layer's input stack. `None` when a
    /// class has too few samples to draw pairs from.
    pub intra_distance: Option<f64>,
    pub inter_distance: Option<f64>,
}

/// Layer with the best validation accuracy, shallowest on ties. Falls back
/// to training accuracy when no validation data was given.
pub fn best_layer(reports: &[LayerReport]) -> Option<usize> {
    let layers = reports.iter().filter(|r| r.kind == ReportKind::Layer);
    let mut best: Option<(&LayerReport, f64)> = None;
    for r in layers {
        let score = r.validation_accuracy.unwrap_or(r.train_accuracy);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((r, score));
        }
    }
    best.map(|(r, _)| r.layer_index)
}

/// Per-layer quantities of one pass through a stack.
#[derive(Debug, Clone, PartialEq)]
pub struct StackTrace {
    /// `[h, q^(1), ..., q^(L)]`; the input of layer ℓ is its leading
    /// `d + N_c(ℓ-1)` columns.
    pub stack: Matrix,
    /// `p^(ℓ)` for every layer.
    pub responses: Vec<Matrix>,
    pub input_dim: usize,
    pub class_count: usize,
}

impl StackTrace {
    pub fn depth(&self) -> usize {
        self.responses.len()
    }

    /// `H^(ℓ)`
    pub fn layer_input(&self, layer: usize) -> Matrix {
        self.stack.leading_cols(layer_width(self.input_dim, self.class_count, layer))
    }

    /// `Q^(ℓ)`
    pub fn relearned(&self, layer: usize) -> Matrix {
        let start = layer_width(self.input_dim, self.class_count, layer);
        self.stack.col_range(start, start + self.class_count)
    }

    /// `[Q^(1), ..., Q^(L)]`
    pub fn relearned_all(&self) -> Matrix {
        self.stack.col_range(self.input_dim, self.stack.cols())
    }
}

pub(crate) fn relu(p: &Matrix) -> Matrix {
    p.map(|v| v.max(0.0))
}

/// Elementwise `q^β` with `0^β = 0` for every β, so ReLU sparsity survives.
pub fn power_regularize(q: &Matrix, beta: f64) -> Result<Matrix> {
    check_beta(beta)?;
    for r in 0..q.rows() {
        for (c, &v) in q.row(r).iter().enumerate() {
            if v < 0.0 {
                return Err(Error::Domain { row: r, col: c, value: v });
            }
        }
    }
    Ok(q.map(|v| pow0(v, beta)))
}

fn pow0(v: f64, beta: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v.powf(beta)
    }
}

/// Sign-preserving power used when ReLU is disabled and relearned features
/// may be negative.
pub(crate) fn signed_power(q: &Matrix, beta: f64) -> Matrix {
    q.map(|v| v.signum() * pow0(v.abs(), beta))
}

/// The fine-tuning ridge layer shared by both stack families.
#[derive(Debug, Clone, PartialEq)]
pub struct FineTune {
    pub weights: Matrix,
    pub lambda: f64,
    pub beta: f64,
    /// Stored power-regularized training features and labels for 1-NN.
    pub reference: Option<(Matrix, Vec<usize>)>,
}

impl FineTune {
    pub(crate) fn features(q_all: &Matrix, beta: f64, relu_enabled: bool) -> Result<Matrix> {
        if relu_enabled {
            power_regularize(q_all, beta)
        } else {
            Ok(signed_power(q_all, beta))
        }
    }

    pub(crate) fn fit(
        q_all: &Matrix,
        y: &OneHotTargets,
        lambda: f64,
        beta: f64,
        relu_enabled: bool,
        nearest: bool,
    ) -> Result<(Self, Matrix)> {
        let z = Self::features(q_all, beta, relu_enabled)?;
        let weights = ridge_fit_targets(&z, y.matrix(), lambda)?.weights;
        let ft = FineTune {
            weights,
            lambda,
            beta,
            reference: nearest.then(|| (z.clone(), y.labels().to_vec())),
        };
        let response = ft.respond(&z)?;
        Ok((ft, response))
    }

    /// Responses for already power-regularized FT features.
    pub(crate) fn respond(&self, z: &Matrix) -> Result<Matrix> {
        match &self.reference {
            None => z.matmul(&self.weights),
            Some((refs, labels)) => {
                let n_c = self.weights.cols();
                let mut out = Matrix::zeros(z.rows(), n_c);
                for r in 0..z.rows() {
                    let mut best = vec![f64::INFINITY; n_c];
                    for (row, &l) in refs.row_iter().zip(labels) {
                        let d = squared_distance(z.row(r), row);
                        if d < best[l] {
                            best[l] = d;
                        }
                    }
                    for (o, d) in out.row_mut(r).iter_mut().zip(best) {
                        *o = -d.sqrt();
                    }
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DanModel {
    pub layer_weights: Vec<Matrix>,
    pub layer_modes: Vec<SolveMode>,
    pub ft: Option<FineTune>,
    pub config: DanConfig,
    pub input_dim: usize,
    pub class_count: usize,
}

/// Validation inputs for layer-wise reporting.
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub features: &'a Matrix,
    pub labels: &'a [usize],
}

pub(crate) fn layer_report(
    layer: usize,
    kind: ReportKind,
    response: &Matrix,
    y: &OneHotTargets,
    stack: Option<&Matrix>,
    validation: Option<(&Matrix, &[usize])>,
) -> Result<LayerReport> {
    let train_accuracy = accuracy(&classify_rows(response)?, y.labels());
    let validation_accuracy = match validation {
        Some((resp, labels)) => Some(accuracy(&classify_rows(resp)?, labels)),
        None => None,
    };
    let train_residual = response.sub(y.matrix())?.frobenius_norm();
    let distances = stack.and_then(|h| class_distances(h, y.labels(), REPORT_DISTANCE_PAIRS, REPORT_DISTANCE_SEED).ok());
    Ok(LayerReport {
        layer_index: layer,
        kind,
        train_accuracy,
        validation_accuracy,
        train_residual,
        intra_distance: distances.as_ref().map(|d| d.intra),
        inter_distance: distances.as_ref().map(|d| d.inter),
    })
}

pub(crate) fn check_validation(v: &Validation<'_>, input_dim: usize, class_count: usize) -> Result<()> {
    if v.features.cols() != input_dim {
        return Err(Error::shape("validation features", input_dim, v.features.cols()));
    }
    if v.features.rows() != v.labels.len() {
        return Err(Error::shape("validation labels", v.features.rows(), v.labels.len()));
    }
    encode_one_hot(v.labels, class_count).map(|_| ())
}

pub fn dan_fit(
    x: &Matrix,
    y: &OneHotTargets,
    config: &DanConfig,
    validation: Option<Validation<'_>>,
) -> Result<(DanModel, Vec<LayerReport>)> {
    config.validate()?;
    if x.rows() == 0 {
        return Err(Error::param("x", "no training samples"));
    }
    if x.rows() != y.len() {
        return Err(Error::shape("dan_fit", format!("{} target rows", x.rows()), y.len()));
    }
    let n_c = y.class_count();
    if let Some(v) = &validation {
        check_validation(v, x.cols(), n_c)?;
    }

    let mut layer_weights = Vec::with_capacity(config.depth);
    let mut layer_modes = Vec::with_capacity(config.depth);
    let mut reports = Vec::with_capacity(config.depth + 1);
    let mut h = x.clone();
    let mut h_val = validation.map(|v| v.features.clone());
    for layer in 1..=config.depth {
        let fit = ridge_fit_targets(&h, y.matrix(), config.lambda_at(layer)).map_err(|e| e.at_layer(layer))?;
        let p = h.matmul(&fit.weights)?;
        let p_val = h_val.as_ref().map(|hv| hv.matmul(&fit.weights)).transpose()?;
        let val = p_val.as_ref().zip(validation).map(|(p, v)| (p, v.labels));
        reports.push(layer_report(layer, ReportKind::Layer, &p, y, Some(&h), val)?);

        let q = if config.relu_enabled { relu(&p) } else { p };
        h = Matrix::hstack(&[&h, &q])?;
        if let (Some(hv), Some(pv)) = (h_val.as_mut(), p_val) {
            let qv = if config.relu_enabled { relu(&pv) } else { pv };
            *hv = Matrix::hstack(&[hv, &qv])?;
        }
        layer_weights.push(fit.weights);
        layer_modes.push(fit.mode);
    }

    let ft = if config.ft_enabled {
        let q_all = h.col_range(x.cols(), h.cols());
        let nearest = config.ft_classifier == FtClassifier::NearestNeighbor;
        let (ft, response) = FineTune::fit(&q_all, y, config.lambda_ft, config.beta_ft, config.relu_enabled, nearest)
            .map_err(|e| e.at_layer(config.depth + 1))?;
        let val_response = match (&h_val, &validation) {
            (Some(hv), Some(_)) => {
                let z = FineTune::features(&hv.col_range(x.cols(), hv.cols()), config.beta_ft, config.relu_enabled)?;
                Some(ft.respond(&z)?)
            }
            _ => None,
        };
        let val = val_response.as_ref().zip(validation).map(|(p, v)| (p, v.labels));
        reports.push(layer_report(config.depth + 1, ReportKind::FineTune, &response, y, None, val)?);
        Some(ft)
    } else {
        None
    };

    let model = DanModel {
        layer_weights,
        layer_modes,
        ft,
        config: config.clone(),
        input_dim: x.cols(),
        class_count: n_c,
    };
    Ok((model, reports))
}

/// Result of a forward pass over a batch of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub trace: StackTrace,
    /// Final response per sample (FT output, 1-NN scores, or `p^(L)`).
    pub response: Matrix,
}

impl DanModel {
    pub fn depth(&self) -> usize {
        self.layer_weights.len()
    }

    pub fn forward_batch(&self, x: &Matrix) -> Result<Forward> {
        if x.cols() != self.input_dim {
            return Err(Error::shape("dan_forward", self.input_dim, x.cols()));
        }
        let mut h = x.clone();
        let mut responses = Vec::with_capacity(self.depth());
        for w in &self.layer_weights {
            let p = h.matmul(w)?;
            let q = if self.config.relu_enabled { relu(&p) } else { p.clone() };
            h = Matrix::hstack(&[&h, &q])?;
            responses.push(p);
        }
        let trace = StackTrace {
            stack: h,
            responses,
            input_dim: self.input_dim,
            class_count: self.class_count,
        };
        let response = match &self.ft {
            Some(ft) => {
                let z = FineTune::features(&trace.relearned_all(), ft.beta, self.config.relu_enabled)?;
                ft.respond(&z)?
            }
            None => trace.responses.last().expect("depth >= 1").clone(),
        };
        Ok(Forward { trace, response })
    }

    /// Single-sample forward pass: per-layer `q^(ℓ)` and the final response.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let out = self.forward_batch(&Matrix::new(1, x.len(), x.to_vec())?)?;
        let qs = (1..=self.depth()).map(|l| out.trace.relearned(l).into_vec()).collect();
        Ok((qs, out.response.into_vec()))
    }

    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        crate::regression::classify(&self.forward(x)?.1)
    }

    pub fn classify_batch(&self, x: &Matrix) -> Result<Vec<usize>> {
        classify_rows(&self.forward_batch(x)?.response)
    }

    /// Keeps the first `depth` layers. The FT layer depends on every layer's
    /// features, so the truncated model classifies from `p^(depth)` directly.
    pub fn truncated(&self, depth: usize) -> Result<DanModel> {
        if depth == 0 || depth > self.depth() {
            return Err(Error::param("depth", format!("must lie in 1..={}, got {depth}", self.depth())));
        }
        let mut config = self.config.clone();
        config.depth = depth;
        config.ft_enabled = false;
        config.ft_classifier = FtClassifier::Regression;
        if !config.layer_lambdas.is_empty() {
            config.layer_lambdas.truncate(depth);
        }
        Ok(DanModel {
            layer_weights: self.layer_weights[..depth].to_vec(),
            layer_modes: self.layer_modes[..depth].to_vec(),
            ft: None,
            config,
            input_dim: self.input_dim,
            class_count: self.class_count,
        })
    }
}

pub fn dan_forward(model: &DanModel, x: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    model.forward(x)
}

pub fn dan_classify(model: &DanModel, x: &[f64]) -> Result<usize> {
    model.classify(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_regularize_examples() {
        let q = Matrix::from_rows(&[[4.0, 9.0]]).unwrap();
        assert_eq!(power_regularize(&q, 1.0).unwrap(), q);
        assert_eq!(power_regularize(&q, 0.5).unwrap().row(0), &[2.0, 3.0]);
        let q0 = Matrix::from_rows(&[[0.0, 0.3, 5.0]]).unwrap();
        assert_eq!(power_regularize(&q0, 0.0).unwrap().row(0), &[0.0, 1.0, 1.0]);
        let neg = Matrix::from_rows(&[[1.0, -0.5]]).unwrap();
        assert!(matches!(power_regularize(&neg, 0.5), Err(Error::Domain { row: 0, col: 1, .. })));
        assert!(power_regularize(&q, 1.5).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DanConfig::default().validate().is_ok());
        let bad = DanConfig { depth: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DanConfig { beta_ft: -0.1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DanConfig {
            ft_enabled: false,
            ft_classifier: FtClassifier::NearestNeighbor,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn widths_follow_the_law() {
        let x = Matrix::from_fn(20, 5, |r, c| ((r * 7 + c * 3) % 11) as f64 - 5.0);
        let labels: Vec<usize> = (0..20).map(|i| i % 3).collect();
        let y = encode_one_hot(&labels, 3).unwrap();
        let cfg = DanConfig { depth: 4, ..Default::default() };
        let (m, reports) = dan_fit(&x, &y, &cfg, None).unwrap();
        let widths: Vec<usize> = m.layer_weights.iter().map(|w| w.rows()).collect();
        assert_eq!(widths, vec![5, 8, 11, 14]);
        assert_eq!(m.ft.as_ref().unwrap().weights.rows(), 12);
        assert_eq!(reports.len(), 5);
        assert_eq!(reports[4].kind, ReportKind::FineTune);
    }

    #[test]
    fn single_class_predicts_zero() {
        let x = Matrix::from_fn(6, 2, |r, c| (r + c) as f64);
        let y = encode_one_hot(&[0; 6], 1).unwrap();
        let (m, _) = dan_fit(&x, &y, &DanConfig::default(), None).unwrap();
        assert_eq!(m.classify(&[10.0, -3.0]).unwrap(), 0);
    }

    #[test]
    fn best_layer_prefers_shallow_ties() {
        let mk = |i, v| LayerReport {
            layer_index: i,
            kind: ReportKind::Layer,
            train_accuracy: 1.0,
            validation_accuracy: Some(v),
            train_residual: 0.0,
            intra_distance: None,
            inter_distance: None,
        };
        assert_eq!(best_layer(&[mk(1, 0.5), mk(2, 0.9), mk(3, 0.9)]), Some(2));
    }
}
