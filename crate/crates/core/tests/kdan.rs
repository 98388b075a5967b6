mod common;

use common::*;
use dan_core::kdan::FORWARD_CHUNK;
use dan_core::linalg::gram_rbf;
use dan_core::{encode_one_hot, kdan_fit, kdan_forward, krr_fit, krr_predict, Error, KdanConfig, Matrix};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn trim(depth: usize, lambda: f64, gamma: f64) -> KdanConfig {
    KdanConfig { depth, lambda_layer: lambda, gamma_layer: gamma, trim: true, ..Default::default() }
}

fn moons(n: usize, noise: f64, seed: u64) -> (Matrix, Vec<usize>) {
    let mut r = rng(seed);
    let jitter = Normal::new(0.0, noise).unwrap();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let t = r.random_range(0.0..std::f64::consts::PI);
        let (a, b) = if i % 2 == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
        rows.push([a + jitter.sample(&mut r), b + jitter.sample(&mut r)]);
        labels.push(i % 2);
    }
    (Matrix::from_rows(&rows).unwrap(), labels)
}

#[test]
fn single_trimmed_layer_is_krr_on_a_query_grid() {
    let x = gaussian(30, 2, &mut rng(1));
    let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let y = encode_one_hot(&labels, 3).unwrap();
    let (m, _) = kdan_fit(&x, &y, &trim(1, 0.05, 0.7), None).unwrap();
    let krr = krr_fit(&x, &y, 0.05, 0.7).unwrap();
    for i in 0..21 {
        for j in 0..21 {
            let q = [-3.0 + 0.3 * i as f64, -3.0 + 0.3 * j as f64];
            let a = kdan_forward(&m, &q).unwrap();
            let b = krr_predict(&krr, &q).unwrap();
            assert!(a.iter().zip(&b).all(|(u, v)| (u - v).abs() <= 1e-10));
        }
    }
}

#[test]
fn tiny_gamma_gives_constant_kernel() {
    let x = gaussian(25, 3, &mut rng(2));
    let y = encode_one_hot(&(0..25).map(|i| i % 2).collect::<Vec<_>>(), 2).unwrap();
    let (m, _) = kdan_fit(&x, &y, &trim(1, 0.1, 1e-12), None).unwrap();
    let p = m.forward_batch(&x).unwrap().response;
    for j in 0..2 {
        let col = p.col_values(j);
        let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(hi - lo <= 1e-6 * hi.abs().max(lo.abs()));
    }
}

#[test]
fn two_moons_gain_with_depth_seed_31() {
    let (x, labels) = moons(400, 0.1, 31);
    let y = encode_one_hot(&labels, 2).unwrap();
    let (_, reports) = kdan_fit(&x, &y, &trim(3, 0.01, 1.0), None).unwrap();
    assert!(reports[2].train_accuracy >= reports[0].train_accuracy);

    let krr = krr_fit(&x, &y, 0.01, 1.0).unwrap();
    let pred = dan_core::regression::classify_rows(&krr.predict_batch(&x).unwrap()).unwrap();
    assert_eq!(reports[0].train_accuracy, dan_core::regression::accuracy(&pred, &labels));
}

#[test]
fn training_sample_query_reproduces_its_gram_row() {
    let x = gaussian(12, 3, &mut rng(3));
    let y = encode_one_hot(&(0..12).map(|i| i % 3).collect::<Vec<_>>(), 3).unwrap();
    let (m, _) = kdan_fit(&x, &y, &trim(1, 0.2, 0.4), None).unwrap();
    let k = gram_rbf(&x, &x, 0.4).unwrap();
    let p = naive_matmul(&k, &m.dual_coeffs[0]);
    for (r, row) in x.row_iter().enumerate() {
        let resp = kdan_forward(&m, row).unwrap();
        assert!(resp.iter().zip(p.row(r)).all(|(a, b)| (a - b).abs() <= 1e-10));
    }
}

#[test]
fn far_query_vanishes_and_ties_to_class_zero() {
    let x = gaussian(10, 2, &mut rng(4));
    let y = encode_one_hot(&[1, 0, 1, 0, 1, 0, 1, 0, 1, 0], 2).unwrap();
    let (m, _) = kdan_fit(&x, &y, &trim(3, 0.1, 1e4), None).unwrap();
    let out = m.forward_batch(&Matrix::from_rows(&[[50.0, -50.0]]).unwrap()).unwrap();
    assert!(out.trace.responses.iter().all(|p| p.max_abs() < 1e-300));
    assert_eq!(m.classify(&[50.0, -50.0]).unwrap(), 0);
}

#[test]
fn batch_forward_reproduces_training_stack() {
    let (x, labels) = moons(80, 0.1, 5);
    let y = encode_one_hot(&labels, 2).unwrap();
    let cfg = KdanConfig { depth: 3, lambda_layer: 0.05, gamma_layer: 0.8, trim: false, ..Default::default() };
    let (m, _) = kdan_fit(&x, &y, &cfg, None).unwrap();

    let mut h = x.clone();
    for (l, alpha) in m.dual_coeffs.iter().enumerate() {
        let k = gram_rbf(&h, &h, 0.8).unwrap();
        let q = naive_matmul(&k, alpha).map(|v| v.max(0.0));
        h = Matrix::hstack(&[&h, &q]).unwrap();
        if l + 1 < m.depth() {
            assert!(max_abs_diff(&m.layer_stack(l + 2), &h) <= 1e-10);
        }
    }
    let out = m.forward_batch(&x).unwrap();
    assert!(max_abs_diff(&out.trace.stack, &h) <= 1e-10);
}

#[test]
fn chunked_forward_matches_row_by_row() {
    let x = gaussian(40, 2, &mut rng(6));
    let y = encode_one_hot(&(0..40).map(|i| i % 2).collect::<Vec<_>>(), 2).unwrap();
    let (m, _) = kdan_fit(&x, &y, &trim(2, 0.1, 0.5), None).unwrap();
    let queries = gaussian(FORWARD_CHUNK + 7, 2, &mut rng(7));
    let batch = m.forward_batch(&queries).unwrap().response;
    for r in [0, FORWARD_CHUNK - 1, FORWARD_CHUNK, FORWARD_CHUNK + 6] {
        let single = kdan_forward(&m, queries.row(r)).unwrap();
        assert!(single.iter().zip(batch.row(r)).all(|(a, b)| (a - b).abs() <= 1e-12));
    }
}

#[test]
fn width_law_and_errors() {
    let x = gaussian(20, 4, &mut rng(8));
    let y = encode_one_hot(&(0..20).map(|i| i % 3).collect::<Vec<_>>(), 3).unwrap();
    let (m, _) = kdan_fit(&x, &y, &trim(4, 0.1, 0.3), None).unwrap();
    for l in 1..=4 {
        assert_eq!(m.layer_stack(l).cols(), 4 + 3 * (l - 1));
    }
    assert!(m.ft.is_none());
    assert!(matches!(kdan_forward(&m, &[0.0; 3]), Err(Error::Shape { .. })));
    assert!(matches!(kdan_fit(&x, &y, &trim(2, 0.1, 0.0), None), Err(Error::InvalidParameter { .. })));
}
