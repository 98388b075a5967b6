mod common;

use common::*;
use dan_core::dan::{best_layer, layer_width, ReportKind, Validation};
use dan_core::regression::{accuracy, classify_rows};
use dan_core::{
    dan_classify, dan_fit, dan_forward, encode_one_hot, power_regularize, ridge_fit, ridge_predict, DanConfig, Error,
    FtClassifier, Matrix,
};
use proptest::prelude::*;
use rand::Rng;

fn plain(depth: usize, lambda: f64) -> DanConfig {
    DanConfig { depth, lambda_layer: lambda, relu_enabled: false, ft_enabled: false, ..Default::default() }
}

#[test]
fn degenerate_stack_is_ridge() {
    let x = gaussian(40, 6, &mut rng(1));
    let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
    let y = encode_one_hot(&labels, 3).unwrap();
    let (model, _) = dan_fit(&x, &y, &plain(1, 0.3), None).unwrap();
    let rr = ridge_fit(&x, &y, 0.3).unwrap();
    for row in x.row_iter() {
        let (_, resp) = dan_forward(&model, row).unwrap();
        let oracle = ridge_predict(&rr, row).unwrap();
        assert!(resp.iter().zip(&oracle).all(|(a, b)| (a - b).abs() <= 1e-10));
        assert_eq!(dan_classify(&model, row).unwrap(), dan_core::classify(&oracle).unwrap());
    }
}

#[test]
fn layer_widths_follow_the_width_law() {
    let x = gaussian(30, 5, &mut rng(2));
    let y = encode_one_hot(&(0..30).map(|i| i % 3).collect::<Vec<_>>(), 3).unwrap();
    let (m, reports) = dan_fit(&x, &y, &DanConfig { depth: 4, ..Default::default() }, None).unwrap();
    let widths: Vec<usize> = m.layer_weights.iter().map(Matrix::rows).collect();
    assert_eq!(widths, vec![5, 8, 11, 14]);
    assert_eq!(m.ft.as_ref().unwrap().weights.rows(), 12);
    assert_eq!(reports.len(), 5);
    assert_eq!(reports[4].kind, ReportKind::FineTune);
    assert_eq!(reports[4].layer_index, 5);
}

#[test]
fn xor_gains_accuracy_with_depth_seed_21() {
    let (x, labels) = xor(200, &mut rng(21));
    let y = encode_one_hot(&labels, 2).unwrap();
    let cfg = DanConfig { depth: 5, lambda_layer: 0.1, ft_enabled: false, ..Default::default() };
    let (m, reports) = dan_fit(&x, &y, &cfg, None).unwrap();
    assert!(reports[4].train_accuracy >= reports[0].train_accuracy);

    // layer 1 is plain ridge
    let rr = ridge_fit(&x, &y, 0.1).unwrap();
    let rr_acc = accuracy(&classify_rows(&rr.predict_batch(&x).unwrap()).unwrap(), &labels);
    assert_eq!(reports[0].train_accuracy, rr_acc);
    assert_eq!(m.layer_weights[0], rr.weights);
}

#[test]
fn power_regularize_examples() {
    let q = gaussian(3, 4, &mut rng(3)).map(f64::abs);
    assert_eq!(power_regularize(&q, 1.0).unwrap(), q);
    let r = power_regularize(&Matrix::from_rows(&[[4.0, 9.0]]).unwrap(), 0.5).unwrap();
    assert_eq!(r.as_slice(), &[2.0, 3.0]);

    let q = Matrix::from_rows(&[[0.0, 0.3, 5.0]]).unwrap();
    let oracle: Vec<f64> = q.as_slice().iter().map(|&v| if v == 0.0 { 0.0 } else { v.powf(0.0) }).collect();
    assert_eq!(power_regularize(&q, 0.0).unwrap().as_slice(), oracle.as_slice());
    assert_eq!(oracle, vec![0.0, 1.0, 1.0]);

    let neg = Matrix::from_rows(&[[0.5, -0.1]]).unwrap();
    assert!(matches!(power_regularize(&neg, 0.5), Err(Error::Domain { row: 0, col: 1, .. })));
}

#[test]
fn single_class_predicts_zero() {
    let x = gaussian(10, 3, &mut rng(4));
    let y = encode_one_hot(&[0; 10], 1).unwrap();
    let (m, _) = dan_fit(&x, &y, &DanConfig::default(), None).unwrap();
    for q in gaussian(5, 3, &mut rng(5)).row_iter() {
        assert_eq!(dan_classify(&m, q).unwrap(), 0);
    }
}

#[test]
fn separated_blobs_are_classified_perfectly_seed_25() {
    let mut r = rng(25);
    let (x, labels) = blobs(200, 3, 10.0, &mut r);
    let (xt, lt) = blobs(100, 3, 10.0, &mut r);
    let y = encode_one_hot(&labels, 2).unwrap();
    let (m, _) = dan_fit(&x, &y, &DanConfig { depth: 3, ..Default::default() }, None).unwrap();
    let pred = m.classify_batch(&xt).unwrap();
    let nn: Vec<usize> = xt.row_iter().map(|q| one_nn(&x, &labels, q)).collect();
    assert_eq!(accuracy(&nn, &lt), 1.0);
    assert_eq!(accuracy(&pred, &lt), 1.0);
}

#[test]
fn relearned_features_are_non_negative() {
    let x = gaussian(50, 4, &mut rng(6));
    let y = encode_one_hot(&(0..50).map(|i| i % 4).collect::<Vec<_>>(), 4).unwrap();
    let (m, _) = dan_fit(&x, &y, &DanConfig { depth: 3, ..Default::default() }, None).unwrap();
    for q in gaussian(20, 4, &mut rng(7)).row_iter() {
        let (qs, _) = dan_forward(&m, q).unwrap();
        assert_eq!(qs.len(), 3);
        assert!(qs.iter().flatten().all(|&v| v >= 0.0));
    }
}

#[test]
fn batch_forward_reproduces_training_stack() {
    let x = gaussian(60, 5, &mut rng(8));
    let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
    let y = encode_one_hot(&labels, 3).unwrap();
    let (m, _) = dan_fit(&x, &y, &DanConfig { depth: 4, ..Default::default() }, None).unwrap();

    // recompute the training-time stack independently of forward_batch
    let mut h = x.clone();
    let mut cached = Vec::new();
    for w in &m.layer_weights {
        let q = naive_matmul(&h, w).map(|v| v.max(0.0));
        h = Matrix::hstack(&[&h, &q]).unwrap();
        cached.push(q);
    }
    let out = m.forward_batch(&x).unwrap();
    for (l, q) in cached.iter().enumerate() {
        assert!(max_abs_diff(&out.trace.relearned(l + 1), q) <= 1e-10);
    }
    for (r, row) in x.row_iter().enumerate() {
        let (_, single) = dan_forward(&m, row).unwrap();
        assert_eq!(single.as_slice(), out.response.row(r));
    }
}

#[test]
fn ablation_switches() {
    let x = gaussian(80, 4, &mut rng(9));
    let labels: Vec<usize> = (0..80).map(|i| i % 2).collect();
    let y = encode_one_hot(&labels, 2).unwrap();

    let no_relu = DanConfig { depth: 3, relu_enabled: false, ..Default::default() };
    let (m, _) = dan_fit(&x, &y, &no_relu, None).unwrap();
    assert!(m.forward_batch(&x).unwrap().response.is_finite());

    let nn = DanConfig { depth: 2, ft_classifier: FtClassifier::NearestNeighbor, ..Default::default() };
    let (m, reports) = dan_fit(&x, &y, &nn, None).unwrap();
    // 1-NN on the training set finds each sample itself
    assert_eq!(reports.last().unwrap().train_accuracy, 1.0);
    assert!(m.ft.as_ref().unwrap().weights.rows() == 4);

    let bad = DanConfig { ft_enabled: false, ft_classifier: FtClassifier::NearestNeighbor, ..Default::default() };
    assert!(matches!(dan_fit(&x, &y, &bad, None), Err(Error::InvalidParameter { .. })));
    assert!(DanConfig { beta_ft: 1.5, ..Default::default() }.validate().is_err());
    assert!(DanConfig { depth: 0, ..Default::default() }.validate().is_err());
}

#[test]
fn validation_reports_and_truncation() {
    let mut r = rng(10);
    let (x, labels) = xor(150, &mut r);
    let (xv, lv) = xor(80, &mut r);
    let y = encode_one_hot(&labels, 2).unwrap();
    let val = Validation { features: &xv, labels: &lv };
    let cfg = DanConfig { depth: 4, lambda_layer: 0.1, ..Default::default() };
    let (m, reports) = dan_fit(&x, &y, &cfg, Some(val)).unwrap();
    assert!(reports.iter().all(|r| r.validation_accuracy.is_some()));
    let best = best_layer(&reports).unwrap();
    let t = m.truncated(best).unwrap();
    let acc = accuracy(&t.classify_batch(&xv).unwrap(), &lv);
    assert_eq!(Some(acc), reports[best - 1].validation_accuracy);
    assert!(m.truncated(0).is_err() && m.truncated(5).is_err());
}

#[test]
fn shape_errors_are_reported() {
    let x = gaussian(10, 3, &mut rng(11));
    let y = encode_one_hot(&[0, 1, 0, 1, 0, 1, 0, 1, 0, 1], 2).unwrap();
    let (m, _) = dan_fit(&x, &y, &DanConfig::default(), None).unwrap();
    assert!(matches!(dan_forward(&m, &[1.0, 2.0]), Err(Error::Shape { .. })));
    let y_short = encode_one_hot(&[0, 1], 2).unwrap();
    assert!(matches!(dan_fit(&x, &y_short, &DanConfig::default(), None), Err(Error::Shape { .. })));
}

#[test]
fn fitting_is_deterministic() {
    let (x, labels) = xor(120, &mut rng(12));
    let y = encode_one_hot(&labels, 2).unwrap();
    let cfg = DanConfig { depth: 3, ..Default::default() };
    assert_eq!(dan_fit(&x, &y, &cfg, None).unwrap(), dan_fit(&x, &y, &cfg, None).unwrap());
}

#[test]
fn training_residual_does_not_grow_on_synthetic_suites() {
    for seed in 0..20u64 {
        let mut r = rng(100 + seed);
        let n = r.random_range(30..90);
        let d = r.random_range(2..6);
        let k = r.random_range(2..5);
        let x = gaussian(n, d, &mut r);
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let y = encode_one_hot(&labels, k).unwrap();
        let cfg = DanConfig { depth: 5, lambda_layer: 0.1, ft_enabled: false, ..Default::default() };
        let (m, reports) = dan_fit(&x, &y, &cfg, None).unwrap();
        let trace = m.forward_batch(&x).unwrap().trace;
        for l in 1..5 {
            let verdicts = dan_core::theory::span_gain_check_columns(&trace.layer_input(l), &y, 0.1);
            let gain = verdicts.map(|v| v.iter().any(|v| !v.in_span)).unwrap_or(false);
            if gain {
                let (a, b) = (reports[l - 1].train_residual.powi(2), reports[l].train_residual.powi(2));
                assert!(b <= a + 1e-8, "seed {seed} layer {l}: {a} -> {b}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn width_law_holds_for_random_shapes(d in 1usize..12, n_c in 1usize..6, depth in 1usize..6, seed in any::<u64>()) {
        let n = 3 * n_c + 4;
        let x = gaussian(n, d, &mut rng(seed));
        let y = encode_one_hot(&(0..n).map(|i| i % n_c).collect::<Vec<_>>(), n_c).unwrap();
        let (m, _) = dan_fit(&x, &y, &DanConfig { depth, ..Default::default() }, None).unwrap();
        for (l, w) in m.layer_weights.iter().enumerate() {
            prop_assert_eq!(w.rows(), d + n_c * l);
            prop_assert_eq!(w.rows(), layer_width(d, n_c, l + 1));
            prop_assert_eq!(w.cols(), n_c);
        }
        prop_assert_eq!(m.ft.as_ref().unwrap().weights.rows(), depth * n_c);
        let out = m.forward_batch(&x).unwrap();
        prop_assert_eq!(out.trace.stack.cols(), d + n_c * depth);
    }
}
