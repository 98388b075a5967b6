//! Computable consequences of the stacking theory: the span gain of a
//! ReLU-ed prediction, and the layer-wise intra/interclass distance dynamics
//! under a Gaussian model of the regression error.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use libm::erfc;

use crate::dan::{DanModel, StackTrace};
use crate::error::{Error, Result};
use crate::kdan::KdanModel;
use crate::linalg::{orthogonal_component, ColumnSpace};
use crate::matrix::{dot, norm, squared_distance, Matrix};
use crate::regression::{encode_one_hot, ridge_fit_targets, OneHotTargets};

/// Relative threshold below which `ρ(ŷ)` counts as lying in `span(X)`.
pub const SPAN_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SpanGainVerdict {
    pub in_span: bool,
    /// `(ŷ - y)ᵀ Q_I ŷ` with `I = {i : ŷ_i < 0}`.
    pub orthogonality_i: f64,
    /// `(ŷ - y)ᵀ Q_{Iᶜ} ŷ`.
    pub orthogonality_ic: f64,
    /// `‖y - ŷ‖²` for the ridge fit on `X`.
    pub residual_before: f64,
    /// `‖y - ŷ'‖²` for the ridge fit on `[X, ρ(ŷ)]`.
    pub residual_after: f64,
    pub prediction: Vec<f64>,
}

impl SpanGainVerdict {
    /// Whether either orthogonality quantity is nonzero, relative to `‖ŷ‖²`.
    pub fn condition_holds(&self, tolerance: f64) -> bool {
        let scale = dot(&self.prediction, &self.prediction).max(f64::MIN_POSITIVE);
        self.orthogonality_i.abs() > tolerance * scale || self.orthogonality_ic.abs() > tolerance * scale
    }
}

fn column_of(values: &[f64]) -> Result<Matrix> {
    Matrix::column(values)
}

fn squared_residual(y: &[f64], fit: &[f64]) -> f64 {
    y.iter().zip(fit).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn ridge_predictions(x: &Matrix, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let model = ridge_fit_targets(x, &column_of(y)?, lambda)?;
    Ok(x.matmul(&model.weights)?.into_vec())
}

pub fn span_gain_check(x: &Matrix, y: &[f64], lambda: f64) -> Result<SpanGainVerdict> {
    let space = checked_space(x, lambda)?;
    span_gain_in(x, &space, y, lambda)
}

fn checked_space(x: &Matrix, lambda: f64) -> Result<ColumnSpace> {
    if !(lambda > 0.0) {
        return Err(Error::param("lambda", format!("must be > 0, got {lambda}")));
    }
    let space = ColumnSpace::of(x)?;
    if space.rank() >= x.rows() {
        return Err(Error::Precondition(format!(
            "rank(X) = {} equals N = {}; the span cannot grow",
            space.rank(),
            x.rows()
        )));
    }
    Ok(space)
}

fn span_gain_in(x: &Matrix, space: &ColumnSpace, y: &[f64], lambda: f64) -> Result<SpanGainVerdict> {
    if y.len() != x.rows() {
        return Err(Error::shape("span_gain_check", x.rows(), y.len()));
    }
    let y_hat = ridge_predictions(x, y, lambda)?;
    let (mut orth_i, mut orth_ic) = (0.0, 0.0);
    for (&p, &t) in y_hat.iter().zip(y) {
        let term = (p - t) * p;
        if p < 0.0 {
            orth_i += term;
        } else {
            orth_ic += term;
        }
    }
    let rho: Vec<f64> = y_hat.iter().map(|v| v.max(0.0)).collect();
    let rho_norm = norm(&rho);
    let in_span = rho_norm == 0.0 || norm(&space.orthogonal_component(&rho)?) <= SPAN_TOLERANCE * rho_norm;
    let augmented = Matrix::hstack(&[x, &column_of(&rho)?])?;
    let y_next = ridge_predictions(&augmented, y, lambda)?;
    Ok(SpanGainVerdict {
        in_span,
        orthogonality_i: orth_i,
        orthogonality_ic: orth_ic,
        residual_before: squared_residual(y, &y_hat),
        residual_after: squared_residual(y, &y_next),
        prediction: y_hat,
    })
}

/// [`span_gain_check`] applied to every target column of a layer.
pub fn span_gain_check_columns(h: &Matrix, y: &OneHotTargets, lambda: f64) -> Result<Vec<SpanGainVerdict>> {
    let space = checked_space(h, lambda)?;
    (0..y.class_count())
        .map(|j| span_gain_in(h, &space, &y.matrix().col_values(j), lambda))
        .collect()
}

/// Residual decrease after augmenting `X` with a column `z ⟂ span(X)`,
/// computed both by refitting and through the ridge hat-matrix algebra.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionIdentity {
    /// `‖y - P_λ y‖² - ‖y - P̄_λ y‖²` from two ridge fits.
    pub refit_decrease: f64,
    /// `2s(zᵀy)² - s²‖z‖²(zᵀy)²` with `s = 1/(‖z‖² + λ)`.
    pub closed_form_decrease: f64,
    /// `‖P_λᵀ H_λ‖_F` with `H_λ = s z zᵀ`.
    pub cross_term: f64,
    /// `P̄_λ - (P_λ + H_λ)`, max entry magnitude.
    pub hat_mismatch: f64,
}

/// Ridge hat matrix `X(XᵀX + λI)⁻¹Xᵀ`.
pub fn ridge_hat_matrix(x: &Matrix, lambda: f64) -> Result<Matrix> {
    let w = ridge_fit_targets(x, &Matrix::identity(x.rows()), lambda)?.weights;
    let mut hat = x.matmul(&w)?;
    hat.symmetrize_from_lower();
    Ok(hat)
}

/// Checks the hat-matrix decomposition behind the residual bound. `z` is
/// projected onto `span(X)ᗮ` first; the identity is stated for that part.
pub fn projection_identity(x: &Matrix, y: &[f64], z: &[f64], lambda: f64) -> Result<ProjectionIdentity> {
    if y.len() != x.rows() || z.len() != x.rows() {
        return Err(Error::shape("projection_identity", x.rows(), format!("{} and {}", y.len(), z.len())));
    }
    let z = orthogonal_component(z, x)?;
    let p = ridge_hat_matrix(x, lambda)?;
    let augmented = Matrix::hstack(&[x, &column_of(&z)?])?;
    let p_bar = ridge_hat_matrix(&augmented, lambda)?;

    let zz = dot(&z, &z);
    let s = 1.0 / (zz + lambda);
    let h = Matrix::from_fn(z.len(), z.len(), |i, j| s * z[i] * z[j]);
    let cross_term = p.t_matmul(&h)?.frobenius_norm();
    let mut hat_mismatch = 0.0f64;
    for i in 0..z.len() {
        for j in 0..z.len() {
            hat_mismatch = hat_mismatch.max((p_bar.get(i, j) - p.get(i, j) - h.get(i, j)).abs());
        }
    }
    let before = squared_residual(y, &p.matvec(y)?);
    let after = squared_residual(y, &p_bar.matvec(y)?);
    let zy = dot(&z, y);
    Ok(ProjectionIdentity {
        refit_decrease: before - after,
        closed_form_decrease: 2.0 * s * zy * zy - s * s * zz * zy * zy,
        cross_term,
        hat_mismatch,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassDistances {
    /// Mean squared distance between same-class pairs.
    pub intra: f64,
    /// Mean squared distance between different-class pairs.
    pub inter: f64,
    pub intra_se: f64,
    pub inter_se: f64,
}

/// Same-class and different-class index pairs drawn uniformly (with
/// replacement) from all ordered pairs of distinct samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub intra: Vec<(usize, usize)>,
    pub inter: Vec<(usize, usize)>,
}

pub fn sample_pairs(labels: &[usize], pairs: usize, seed: u64) -> Result<PairSample> {
    if pairs == 0 {
        return Err(Error::Sampling("pair count must be positive".into()));
    }
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let present: Vec<&Vec<usize>> = members.iter().filter(|m| !m.is_empty()).collect();
    if present.len() < 2 {
        return Err(Error::Sampling(format!("need at least two classes, found {}", present.len())));
    }
    if let Some((c, m)) = members.iter().enumerate().find(|(_, m)| m.len() == 1) {
        return Err(Error::Sampling(format!("class {c} has {} sample; at least 2 are needed", m.len())));
    }

    let sizes: Vec<f64> = present.iter().map(|m| m.len() as f64).collect();
    let intra_weights: Vec<f64> = sizes.iter().map(|n| n * (n - 1.0)).collect();
    let mut inter_classes = Vec::new();
    let mut inter_weights = Vec::new();
    for a in 0..present.len() {
        for b in 0..present.len() {
            if a != b {
                inter_classes.push((a, b));
                inter_weights.push(sizes[a] * sizes[b]);
            }
        }
    }
    let bad = |e: rand::distr::weighted::Error| Error::Sampling(e.to_string());
    let intra_pick = WeightedIndex::new(&intra_weights).map_err(bad)?;
    let inter_pick = WeightedIndex::new(&inter_weights).map_err(bad)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut intra = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let m = present[intra_pick.sample(&mut rng)];
        let i = rng.random_range(0..m.len());
        let mut j = rng.random_range(0..m.len() - 1);
        if j >= i {
            j += 1;
        }
        intra.push((m[i], m[j]));
    }
    let mut inter = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let (a, b) = inter_classes[inter_pick.sample(&mut rng)];
        let i = present[a][rng.random_range(0..present[a].len())];
        let j = present[b][rng.random_range(0..present[b].len())];
        inter.push((i, j));
    }
    Ok(PairSample { intra, inter })
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl PairSample {
    pub fn distances(&self, h: &Matrix) -> ClassDistances {
        let d = |&(i, j): &(usize, usize)| squared_distance(h.row(i), h.row(j));
        let (intra, intra_se) = mean_and_se(&self.intra.iter().map(d).collect::<Vec<_>>());
        let (inter, inter_se) = mean_and_se(&self.inter.iter().map(d).collect::<Vec<_>>());
        ClassDistances { intra, inter, intra_se, inter_se }
    }
}

/// Monte-Carlo estimate of the expected intra/interclass squared distances
/// between rows of `h`. The pair draw depends only on `labels` and `seed`,
/// so every layer of a stack is measured on the same pairs.
pub fn class_distances(h: &Matrix, labels: &[usize], pairs: usize, seed: u64) -> Result<ClassDistances> {
    if h.rows() != labels.len() {
        return Err(Error::shape("class_distances", h.rows(), labels.len()));
    }
    Ok(sample_pairs(labels, pairs, seed)?.distances(h))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Density of `N(0, σ²)` at `t`.
pub fn gaussian_density(t: f64, sigma: f64) -> f64 {
    normal_pdf(t / sigma) / sigma
}

/// `P(ε > -t)` for `ε ~ N(0, σ²)`; the σ = 0 limit is 1 for `t > 0`, else 0.
pub fn exceed_probability(t: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    normal_cdf(t / sigma)
}

/// First two moments of `ρ(t + ε)` with `ε ~ N(0, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReluMoments {
    pub mean: f64,
    pub second: f64,
    pub variance: f64,
}

pub fn relu_moments(t: f64, sigma: f64) -> ReluMoments {
    if sigma == 0.0 {
        let m = t.max(0.0);
        return ReluMoments { mean: m, second: m * m, variance: 0.0 };
    }
    let a = t / sigma;
    let p = normal_cdf(a);
    // σ²·p_σ(t), the density term of both moments
    let g = sigma * normal_pdf(a);
    let mean = t * p + g;
    let second = (t * t + sigma * sigma) * p + t * g;
    // Var ρ(t+σZ) = σ²V(a); for a > 0 rewrite V through Q = Φ(-a) so the
    // leading 1 is not recovered by cancellation.
    let v = if a > 0.0 {
        let q = normal_cdf(-a);
        let phi = normal_pdf(a);
        1.0 - q + a * a * q * (1.0 - q) - a * phi * (1.0 - 2.0 * q) - phi * phi
    } else {
        let phi = normal_pdf(a);
        let m = a * p + phi;
        (a * a + 1.0) * p + a * phi - m * m
    };
    ReluMoments { mean, second, variance: sigma * sigma * v.clamp(0.0, 1.0) }
}

/// Upper bound on the Gaussian tail `P(Z > |t|/σ)`:
/// `√2 / (√π (√(8/π + x²) + |x|)) · exp(-x²/2)` with `x = t/σ`.
pub fn tail_bound(t: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::param("sigma", format!("must be > 0, got {sigma}")));
    }
    let x = (t / sigma).abs();
    Ok((2.0 / PI).sqrt() / ((8.0 / PI + x * x).sqrt() + x) * (-0.5 * x * x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbabilityMode {
    /// `Φ(t/σ)` under the zero-mean Gaussian error model.
    Gaussian,
    /// Fraction of class samples whose error exceeds `-t`.
    Empirical,
}

/// Per-class statistics of the prediction error `ε = Ŷ - Y`. All matrices
/// are `N_c × N_c` with rows indexed by class and columns by coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub sigma: Matrix,
    pub probability: Matrix,
    /// Per-class mean error; the model assumes zero.
    pub mean: Matrix,
    /// Class target vectors `t_c`.
    pub targets: Matrix,
    pub class_sizes: Vec<usize>,
}

impl ErrorStats {
    pub fn class_count(&self) -> usize {
        self.class_sizes.len()
    }

    /// `‖σ(c)‖²`
    pub fn sigma_norm_sq(&self, class: usize) -> f64 {
        dot(self.sigma.row(class), self.sigma.row(class))
    }

    /// Largest absolute per-class mean error.
    pub fn max_mean_error(&self) -> f64 {
        self.mean.max_abs()
    }
}

pub fn error_stats(p: &Matrix, y: &OneHotTargets) -> Result<ErrorStats> {
    error_stats_with(p, y, ProbabilityMode::Gaussian)
}

pub fn error_stats_with(p: &Matrix, y: &OneHotTargets, mode: ProbabilityMode) -> Result<ErrorStats> {
    if p.shape() != y.matrix().shape() {
        return Err(Error::shape("error_stats", format!("{:?}", y.matrix().shape()), format!("{:?}", p.shape())));
    }
    let n_c = y.class_count();
    let sizes = y.class_sizes();
    if let Some(c) = sizes.iter().position(|&n| n == 0) {
        return Err(Error::Precondition(format!("class {c} has no samples")));
    }
    let targets = Matrix::from_fn(n_c, n_c, |c, j| if c == j { 1.0 } else { 0.0 });
    let mut sum = Matrix::zeros(n_c, n_c);
    for (r, &l) in y.labels().iter().enumerate() {
        for j in 0..n_c {
            let e = p.get(r, j) - y.matrix().get(r, j);
            sum.set(l, j, sum.get(l, j) + e);
        }
    }
    let mean = Matrix::from_fn(n_c, n_c, |c, j| sum.get(c, j) / sizes[c] as f64);
    let mut sq = Matrix::zeros(n_c, n_c);
    let mut exceed = Matrix::zeros(n_c, n_c);
    for (r, &l) in y.labels().iter().enumerate() {
        for j in 0..n_c {
            let e = p.get(r, j) - y.matrix().get(r, j);
            let d = e - mean.get(l, j);
            sq.set(l, j, sq.get(l, j) + d * d);
            if e > -targets.get(l, j) {
                exceed.set(l, j, exceed.get(l, j) + 1.0);
            }
        }
    }
    let sigma = Matrix::from_fn(n_c, n_c, |c, j| {
        if sizes[c] < 2 {
            0.0
        } else {
            (sq.get(c, j) / (sizes[c] - 1) as f64).sqrt()
        }
    });
    let probability = match mode {
        ProbabilityMode::Gaussian => Matrix::from_fn(n_c, n_c, |c, j| exceed_probability(targets.get(c, j), sigma.get(c, j))),
        ProbabilityMode::Empirical => Matrix::from_fn(n_c, n_c, |c, j| exceed.get(c, j) / sizes[c] as f64),
    };
    Ok(ErrorStats {
        sigma,
        probability,
        mean,
        targets,
        class_sizes: sizes,
    })
}

/// Expected distance increments contributed by one layer's relearned
/// features under the Gaussian error model.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoreticalDeltas {
    /// `δ_w(c)`
    pub delta_w: Vec<f64>,
    /// `δ_b(c, c')`, symmetric with a zero diagonal.
    pub delta_b: Matrix,
    /// `2‖σ(c)‖²`, the upper bound on `δ_w(c)`.
    pub delta_w_bound: Vec<f64>,
    /// `t_{c,c}² + t_{c',c'}²`, the σ → 0 limit of `δ_b(c, c')`.
    pub delta_b_limit: Matrix,
    /// `t_{c,c}²P_{c,c} + t_{c',c'}²P_{c',c'}`, the leading term of the lower bound on `δ_b`.
    pub delta_b_leading: Matrix,
}

impl TheoreticalDeltas {
    /// Whether `0 ≤ δ_w(c) ≤ 2‖σ(c)‖²` holds for every class, with `slack`.
    pub fn within_bounds(&self, slack: f64) -> bool {
        self.delta_w
            .iter()
            .zip(&self.delta_w_bound)
            .all(|(&d, &b)| d >= -slack && d <= b + slack)
    }

    /// Pair-weighted average of `δ_w` over ordered same-class pairs.
    pub fn mean_intra(&self, sizes: &[usize]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (c, &n) in sizes.iter().enumerate() {
            let w = (n * n.saturating_sub(1)) as f64;
            num += w * self.delta_w[c];
            den += w;
        }
        if den > 0.0 { num / den } else { 0.0 }
    }

    /// Pair-weighted average of `δ_b` over ordered different-class pairs.
    pub fn mean_inter(&self, sizes: &[usize]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, &na) in sizes.iter().enumerate() {
            for (b, &nb) in sizes.iter().enumerate() {
                if a != b {
                    let w = (na * nb) as f64;
                    num += w * self.delta_b.get(a, b);
                    den += w;
                }
            }
        }
        if den > 0.0 { num / den } else { 0.0 }
    }
}

/// Evaluates the expected distance increments from the ReLU moments:
///
/// `δ_w(c) = Σ_j 2 Var ρ(t_{c,j} + ε_j)`,
/// `δ_b(c,c') = Σ_j E ρ(t_{c,j}+ε_j)² + E ρ(t_{c',j}+ε'_j)² - 2 E ρ(t_{c,j}+ε_j) E ρ(t_{c',j}+ε'_j)`.
pub fn theoretical_deltas(stats: &ErrorStats) -> TheoreticalDeltas {
    let n_c = stats.class_count();
    let moments: Vec<Vec<ReluMoments>> = (0..n_c)
        .map(|c| (0..n_c).map(|j| relu_moments(stats.targets.get(c, j), stats.sigma.get(c, j))).collect())
        .collect();
    let delta_w = moments.iter().map(|row| row.iter().map(|m| 2.0 * m.variance).sum()).collect();
    let delta_w_bound = (0..n_c).map(|c| 2.0 * stats.sigma_norm_sq(c)).collect();
    let mut delta_b = Matrix::zeros(n_c, n_c);
    let mut delta_b_limit = Matrix::zeros(n_c, n_c);
    let mut delta_b_leading = Matrix::zeros(n_c, n_c);
    for a in 0..n_c {
        for b in 0..n_c {
            if a == b {
                continue;
            }
            let v: f64 = (0..n_c)
                .map(|j| {
                    let (ma, mb) = (moments[a][j], moments[b][j]);
                    ma.second + mb.second - 2.0 * ma.mean * mb.mean
                })
                .sum();
            delta_b.set(a, b, v);
            let (ta, tb) = (stats.targets.get(a, a), stats.targets.get(b, b));
            delta_b_limit.set(a, b, ta * ta + tb * tb);
            delta_b_leading.set(
                a,
                b,
                ta * ta * stats.probability.get(a, a) + tb * tb * stats.probability.get(b, b),
            );
        }
    }
    TheoreticalDeltas {
        delta_w,
        delta_b,
        delta_w_bound,
        delta_b_limit,
        delta_b_leading,
    }
}

/// Models that expose their per-layer stacks and responses.
pub trait Layerwise {
    fn class_count(&self) -> usize;
    fn trace(&self, x: &Matrix) -> Result<StackTrace>;
}

impl Layerwise for DanModel {
    fn class_count(&self) -> usize {
        self.class_count
    }

    fn trace(&self, x: &Matrix) -> Result<StackTrace> {
        Ok(self.forward_batch(x)?.trace)
    }
}

impl Layerwise for KdanModel {
    fn class_count(&self) -> usize {
        self.class_count
    }

    fn trace(&self, x: &Matrix) -> Result<StackTrace> {
        Ok(self.forward_batch(x)?.trace)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsRow {
    pub layer: usize,
    pub w_phys: f64,
    pub b_phys: f64,
    pub w_theo: f64,
    pub b_theo: f64,
    pub w_se: f64,
    pub b_se: f64,
    /// Pair-weighted increments predicted from this layer's errors.
    pub delta_w: f64,
    pub delta_b: f64,
    pub stats: ErrorStats,
    pub deltas: TheoreticalDeltas,
}

impl DynamicsRow {
    pub fn gap(&self) -> f64 {
        self.b_phys - self.w_phys
    }

    /// Largest relative deviation of the theoretical from the physical values.
    pub fn relative_deviation(&self) -> f64 {
        let rel = |theo: f64, phys: f64| if phys == 0.0 { (theo - phys).abs() } else { ((theo - phys) / phys).abs() };
        rel(self.w_theo, self.w_phys).max(rel(self.b_theo, self.b_phys))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceDynamics {
    pub rows: Vec<DynamicsRow>,
}

impl DistanceDynamics {
    pub fn gaps(&self) -> Vec<f64> {
        self.rows.iter().map(DynamicsRow::gap).collect()
    }

    pub fn gap_non_decreasing(&self) -> bool {
        self.gaps().windows(2).all(|w| w[1] >= w[0])
    }

    pub fn max_relative_deviation(&self) -> f64 {
        self.rows.iter().map(DynamicsRow::relative_deviation).fold(0.0, f64::max)
    }

    pub fn bounds_hold(&self, slack: f64) -> bool {
        self.rows.iter().all(|r| r.deltas.within_bounds(slack))
    }

    /// Tab-separated table: `layer, w_phys, b_phys, w_theo, b_theo, gap`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("layer\tw_phys\tb_phys\tw_theo\tb_theo\tgap\n");
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}\t{}", r.layer, r.w_phys, r.b_phys, r.w_theo, r.b_theo, r.gap());
        }
        out
    }
}

/// Physical and theoretical intra/interclass distances for every layer of
/// `model` on `(x, labels)`. Theoretical values start at the physical
/// layer-1 distances and accumulate the predicted increments.
pub fn dynamics_trace<M: Layerwise + ?Sized>(
    model: &M,
    x: &Matrix,
    labels: &[usize],
    pairs: usize,
    seed: u64,
) -> Result<DistanceDynamics> {
    if x.rows() != labels.len() {
        return Err(Error::shape("dynamics_trace", x.rows(), labels.len()));
    }
    let y = encode_one_hot(labels, model.class_count())?;
    let trace = model.trace(x)?;
    let sample = sample_pairs(labels, pairs, seed)?;
    let mut rows: Vec<DynamicsRow> = Vec::with_capacity(trace.depth());
    for layer in 1..=trace.depth() {
        let phys = sample.distances(&trace.layer_input(layer));
        let stats = error_stats(&trace.responses[layer - 1], &y)?;
        let deltas = theoretical_deltas(&stats);
        let (w_theo, b_theo) = match rows.last() {
            None => (phys.intra, phys.inter),
            Some(prev) => (prev.w_theo + prev.delta_w, prev.b_theo + prev.delta_b),
        };
        rows.push(DynamicsRow {
            layer,
            w_phys: phys.intra,
            b_phys: phys.inter,
            w_theo,
            b_theo,
            w_se: phys.intra_se,
            b_se: phys.inter_se,
            delta_w: deltas.mean_intra(&stats.class_sizes),
            delta_b: deltas.mean_inter(&stats.class_sizes),
            stats,
            deltas,
        });
    }
    Ok(DistanceDynamics { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_bound_is_tight_at_zero() {
        assert!((tail_bound(0.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(tail_bound(3.0, 1.0).unwrap() >= 0.00135);
        assert!(tail_bound(1.0, 0.0).is_err());
    }

    #[test]
    fn cdf_reference_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.96) - 0.975_002_104_851_780).abs() < 1e-12);
        assert!((normal_cdf(-3.0) - 0.001_349_898_031_630_095).abs() < 1e-15);
    }

    #[test]
    fn degenerate_moments() {
        let m = relu_moments(1.0, 0.0);
        assert_eq!((m.mean, m.second, m.variance), (1.0, 1.0, 0.0));
        let m = relu_moments(-1.0, 0.0);
        assert_eq!((m.mean, m.second, m.variance), (0.0, 0.0, 0.0));
        // t = 0: half-normal moments
        let m = relu_moments(0.0, 2.0);
        assert!((m.mean - 2.0 / (2.0 * PI).sqrt()).abs() < 1e-15);
        assert!((m.second - 2.0).abs() < 1e-15);
    }

    #[test]
    fn point_mass_distances() {
        let h = Matrix::from_rows(&[[0.0, 0.0], [0.0, 0.0], [3.0, 4.0], [3.0, 4.0]]).unwrap();
        let d = class_distances(&h, &[0, 0, 1, 1], 50, 1).unwrap();
        assert_eq!(d.intra, 0.0);
        assert_eq!(d.inter, 25.0);
    }

    #[test]
    fn sampling_preconditions() {
        let h = Matrix::zeros(3, 1);
        assert!(matches!(class_distances(&h, &[0, 0, 1], 10, 0), Err(Error::Sampling(_))));
        assert!(matches!(class_distances(&h, &[0, 0, 0], 10, 0), Err(Error::Sampling(_))));
    }

    #[test]
    fn perfect_predictions_are_degenerate() {
        let y = encode_one_hot(&[0, 1, 1, 0, 2, 2], 3).unwrap();
        let s = error_stats(y.matrix(), &y).unwrap();
        assert_eq!(s.sigma.max_abs(), 0.0);
        for c in 0..3 {
            for j in 0..3 {
                assert_eq!(s.probability.get(c, j), if c == j { 1.0 } else { 0.0 });
            }
        }
        let d = theoretical_deltas(&s);
        assert!(d.delta_w.iter().all(|&v| v == 0.0));
        assert_eq!(d.delta_b.get(0, 1), 2.0);
        assert_eq!(d.delta_b_limit.get(2, 0), 2.0);
    }

    #[test]
    fn tsv_header() {
        let t = DistanceDynamics { rows: vec![] }.to_tsv();
        assert_eq!(t, "layer\tw_phys\tb_phys\tw_theo\tb_theo\tgap\n");
    }
}
