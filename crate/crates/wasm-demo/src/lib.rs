//! WebAssembly bindings behind `www/index.html`: per-layer decision regions
//! on 2-D toy sets, the ReLU moment and tail-bound explorer, and
//! intra/interclass distance dynamics.

use dan_core::theory::{dynamics_trace, normal_cdf, relu_moments, tail_bound};
use dan_core::{dan_fit, encode_one_hot, kdan_fit, AnyModel, DanConfig, KdanConfig, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use wasm_bindgen::prelude::*;

/// Half-width of the square shown in the region plots.
pub const EXTENT: f64 = 2.0;

/// Two-class toy sets in `[-EXTENT, EXTENT]²`: `xor`, `moons`, `circles`,
/// `spirals` or `blobs`.
pub fn toy(name: &str, n: usize, noise: f64, seed: u64) -> Result<(Matrix, Vec<usize>), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let u: f64 = rng.random();
        let (x, y) = match name {
            "xor" => {
                let sx = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let sy = if class == 0 { sx } else { -sx };
                (sx, sy)
            }
            "moons" => {
                let a = std::f64::consts::PI * u;
                if class == 0 {
                    (a.cos() - 0.5, a.sin() - 0.25)
                } else {
                    (0.5 - a.cos(), 0.25 - a.sin())
                }
            }
            "circles" => {
                let a = std::f64::consts::TAU * u;
                let r = if class == 0 { 0.6 } else { 1.4 };
                (r * a.cos(), r * a.sin())
            }
            "spirals" => {
                let t = 0.3 + 3.0 * u;
                let a = 1.8 * t + std::f64::consts::PI * class as f64;
                (0.5 * t * a.cos(), 0.5 * t * a.sin())
            }
            "blobs" => {
                let c = if class == 0 { -0.8 } else { 0.8 };
                (c, c)
            }
            other => return Err(format!("unknown dataset `{other}`")),
        };
        let zx: f64 = rng.sample(StandardNormal);
        let zy: f64 = rng.sample(StandardNormal);
        rows.push([
            (x + noise * zx).clamp(-EXTENT, EXTENT),
            (y + noise * zy).clamp(-EXTENT, EXTENT),
        ]);
        labels.push(class);
    }
    let m = Matrix::from_rows(&rows).map_err(|e| e.to_string())?;
    Ok((m, labels))
}

fn fit(kind: &str, x: &Matrix, labels: &[usize], depth: usize, lambda: f64, gamma: f64) -> Result<AnyModel, String> {
    let y = encode_one_hot(labels, 2).map_err(|e| e.to_string())?;
    let model = match kind {
        "dan" => {
            let config = DanConfig {
                depth,
                lambda_layer: lambda,
                ft_enabled: false,
                ..DanConfig::default()
            };
            AnyModel::Dan(dan_fit(x, &y, &config, None).map_err(|e| e.to_string())?.0)
        }
        "kdan" => {
            let config = KdanConfig {
                depth,
                lambda_layer: lambda,
                gamma_layer: gamma,
                trim: true,
                ..KdanConfig::default()
            };
            AnyModel::Kdan(kdan_fit(x, &y, &config, None).map_err(|e| e.to_string())?.0)
        }
        other => return Err(format!("unknown model `{other}`")),
    };
    Ok(model)
}

/// Row-major `grid × grid` lattice over the plot square, top row first.
pub fn lattice(grid: usize) -> Matrix {
    let step = 2.0 * EXTENT / (grid.max(2) - 1) as f64;
    Matrix::from_fn(grid * grid, 2, |i, j| {
        let (r, c) = (i / grid, i % grid);
        if j == 0 {
            -EXTENT + step * c as f64
        } else {
            EXTENT - step * r as f64
        }
    })
}

/// Decision regions of every layer of a model fitted on a toy set.
#[wasm_bindgen]
pub struct Regions {
    grid: usize,
    depth: usize,
    /// Per layer, `p_1 - p_0` on the lattice.
    margins: Vec<Vec<f64>>,
    points: Vec<f64>,
    labels: Vec<u8>,
    accuracy: Vec<f64>,
}

#[wasm_bindgen]
impl Regions {
    #[allow(clippy::too_many_arguments)]
    #[wasm_bindgen(constructor)]
    pub fn new(
        dataset: &str,
        n: usize,
        noise: f64,
        seed: u64,
        model: &str,
        depth: usize,
        lambda: f64,
        gamma: f64,
        grid: usize,
    ) -> Result<Regions, String> {
        let (x, labels) = toy(dataset, n, noise, seed)?;
        let m = fit(model, &x, &labels, depth, lambda, gamma)?;
        let margins_of = |q: &Matrix| -> Result<Vec<Vec<f64>>, String> {
            let out = m.forward_batch(q).map_err(|e| e.to_string())?;
            Ok(out
                .trace
                .responses
                .iter()
                .map(|p| p.row_iter().map(|r| r[1] - r[0]).collect())
                .collect())
        };
        let margins = margins_of(&lattice(grid))?;
        let accuracy = margins_of(&x)?
            .iter()
            .map(|layer| {
                let hits = layer.iter().zip(&labels).filter(|(&v, &l)| usize::from(v > 0.0) == l).count();
                hits as f64 / labels.len() as f64
            })
            .collect();
        Ok(Regions {
            grid,
            depth: m.depth(),
            margins,
            points: x.into_vec(),
            labels: labels.iter().map(|&l| l as u8).collect(),
            accuracy,
        })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// `p_1 - p_0` of layer `layer` (1-based) over the lattice.
    pub fn margin(&self, layer: usize) -> Vec<f64> {
        self.margins[layer.clamp(1, self.depth) - 1].clone()
    }

    /// Training accuracy of `argmax p^(ℓ)` for every layer.
    pub fn accuracy(&self) -> Vec<f64> {
        self.accuracy.clone()
    }

    /// Interleaved `x, y` of the training points.
    pub fn points(&self) -> Vec<f64> {
        self.points.clone()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.labels.clone()
    }
}

/// `[E[relu(t+ε)], E[relu(t+ε)²], Var]` for `ε ~ N(0, σ²)`.
#[wasm_bindgen]
pub fn moments(t: f64, sigma: f64) -> Vec<f64> {
    let m = relu_moments(t, sigma);
    vec![m.mean, m.second, m.variance]
}

/// Exact tail `P(Z > |t|/σ)` and its closed-form upper bound, sampled at
/// `n` points of `t` in `[0, t_max]`; returned as `t, exact, bound` triples.
#[wasm_bindgen]
pub fn tail_curve(sigma: f64, t_max: f64, n: usize) -> Result<Vec<f64>, String> {
    let mut out = Vec::with_capacity(3 * n);
    for i in 0..n {
        let t = t_max * i as f64 / (n.max(2) - 1) as f64;
        out.push(t);
        out.push(normal_cdf(-t.abs() / sigma));
        out.push(tail_bound(t, sigma).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

/// Distance dynamics of a model fitted on a toy set, flattened as
/// `layer, w_phys, b_phys, w_theo, b_theo` rows.
#[allow(clippy::too_many_arguments)]
#[wasm_bindgen]
pub fn dynamics(
    dataset: &str,
    n: usize,
    noise: f64,
    seed: u64,
    model: &str,
    depth: usize,
    lambda: f64,
    gamma: f64,
) -> Result<Vec<f64>, String> {
    let (x, labels) = toy(dataset, n, noise, seed)?;
    let m = fit(model, &x, &labels, depth, lambda, gamma)?;
    let d = dynamics_trace(&m, &x, &labels, 2000, seed).map_err(|e| e.to_string())?;
    Ok(d
        .rows
        .iter()
        .flat_map(|r| [r.layer as f64, r.w_phys, r.b_phys, r.w_theo, r.b_theo])
        .collect())
}
