mod common;

use common::*;
use dan_core::serial::{from_bytes, load, save, to_bytes, AnyModel, ModelFile, FORMAT_VERSION, MAGIC};
use dan_core::{dan_fit, encode_one_hot, kdan_fit, DanConfig, Error, FtClassifier, KdanConfig, Standardizer};

fn bits(m: &dan_core::Matrix) -> Vec<u64> {
    m.as_slice().iter().map(|v| v.to_bits()).collect()
}

fn fixtures() -> Vec<ModelFile> {
    let x = gaussian(40, 3, &mut rng(1));
    let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
    let y = encode_one_hot(&labels, 3).unwrap();
    let std = Some(Standardizer::fit_matrix(&x));
    let mut out = Vec::new();
    for cfg in [
        DanConfig { depth: 3, ..Default::default() },
        DanConfig { depth: 2, ft_enabled: false, relu_enabled: false, layer_lambdas: vec![0.5, 2.0], ..Default::default() },
        DanConfig { depth: 2, ft_classifier: FtClassifier::NearestNeighbor, ..Default::default() },
    ] {
        let (m, _) = dan_fit(&x, &y, &cfg, None).unwrap();
        out.push(ModelFile { model: AnyModel::Dan(m), standardizer: std.clone() });
    }
    for cfg in [
        KdanConfig { depth: 3, ..Default::default() },
        KdanConfig { depth: 2, trim: false, ..Default::default() },
    ] {
        let (m, _) = kdan_fit(&x, &y, &cfg, None).unwrap();
        out.push(ModelFile { model: AnyModel::Kdan(m), standardizer: None });
    }
    out
}

#[test]
fn round_trip_is_bit_exact_for_both_families() {
    let dir = tempfile::tempdir().unwrap();
    let queries = gaussian(25, 3, &mut rng(2));
    for (i, file) in fixtures().iter().enumerate() {
        let path = dir.path().join(format!("m{i}.danm"));
        save(&path, file).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(&back, file);
        let a = file.model.forward_batch(&queries).unwrap().response;
        let b = back.model.forward_batch(&queries).unwrap().response;
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(to_bytes(&back).unwrap(), std::fs::read(&path).unwrap());
        assert!(!dir.path().join(format!("m{i}.danm.partial")).exists());
    }
}

#[test]
fn header_layout() {
    let bytes = to_bytes(&fixtures()[0]).unwrap();
    assert_eq!(&bytes[..4], &MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
    let k = to_bytes(&fixtures()[3]).unwrap();
    assert_eq!(u32::from_le_bytes(k[8..12].try_into().unwrap()), 2);
}

#[test]
fn corrupt_containers_are_model_errors() {
    let good = to_bytes(&fixtures()[1]).unwrap();

    let mut version = good.clone();
    version[4..8].copy_from_slice(&99u32.to_le_bytes());
    assert!(matches!(from_bytes(&version), Err(Error::Model(_))));

    let mut tag = good.clone();
    tag[8..12].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(from_bytes(&tag), Err(Error::Model(_))));

    for cut in [3, 12, good.len() / 2, good.len() - 1] {
        assert!(matches!(from_bytes(&good[..cut]), Err(Error::Model(_))), "cut at {cut}");
    }
    let mut trailing = good.clone();
    trailing.push(0);
    assert!(matches!(from_bytes(&trailing), Err(Error::Model(_))));
}
