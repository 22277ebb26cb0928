use std::collections::BTreeSet;

use stagewise::data::*;
use stagewise::Error;

#[test]
fn file_roundtrip_is_bitwise() {
    let ds = gen_synthetic(37, 5, 12, 0.7, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    write_dataset(&ds, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"DCV1");
    assert_eq!(bytes.len(), 24 + 37 * 2 + 37 * 3 * 12 * 12);
    let back = read_dataset(&path).unwrap();
    assert_eq!(back, ds);
    assert_eq!(encode_dataset(&back).unwrap(), bytes);
}

#[test]
fn header_layout_is_little_endian_u32() {
    let ds = gen_synthetic(3, 2, 4, 0.0, 0).unwrap();
    let bytes = encode_dataset(&ds).unwrap();
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    assert_eq!((field(0), field(1), field(2), field(3), field(4)), (3, 4, 4, 3, 2));
    assert_eq!(&bytes[24..30], &[0, 0, 1, 0, 0, 0]);
    assert_eq!(&bytes[30..], &ds.pixels[..]);
}

#[test]
fn decode_errors() {
    let ds = gen_synthetic(4, 2, 4, 0.5, 1).unwrap();
    let bytes = encode_dataset(&ds).unwrap();

    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"XXXX");
    assert!(matches!(decode_dataset(&bad), Err(Error::BadMagic { found, .. }) if &found == b"XXXX"));

    let cut = &bytes[..bytes.len() - 10];
    match decode_dataset(cut) {
        Err(Error::Truncated { expected, actual }) => {
            assert_eq!(expected, bytes.len() as u64);
            assert_eq!(actual, cut.len() as u64);
        }
        other => panic!("unexpected {other:?}"),
    }
    let err = decode_dataset(cut).unwrap_err().to_string();
    assert!(err.contains(&bytes.len().to_string()) && err.contains(&cut.len().to_string()));
    assert!(matches!(decode_dataset(&bytes[..10]), Err(Error::Truncated { .. })));

    let mut label = bytes.clone();
    label[24 + 2 * 2] = 9;
    assert!(matches!(decode_dataset(&label), Err(Error::Label { index: 2, label: 9, n_classes: 2 })));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.bin");
    let err = read_dataset(&missing).unwrap_err();
    assert!(err.to_string().contains("missing.bin"));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn generator_is_deterministic_per_seed() {
    let a = gen_synthetic(50, 8, 16, 1.0, 42).unwrap();
    let b = gen_synthetic(50, 8, 16, 1.0, 42).unwrap();
    let c = gen_synthetic(50, 8, 16, 1.0, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.pixels, c.pixels);
    assert_eq!(a.labels, c.labels);
}

#[test]
fn generator_rejects_bad_sizes() {
    assert!(gen_synthetic(10, 1, 16, 0.5, 0).is_err());
    assert!(gen_synthetic(0, 4, 16, 0.5, 0).is_err());
    assert!(gen_synthetic(10, 4, 2, 0.5, 0).is_err());
    assert!(gen_synthetic(10, 4, 16, -1.0, 0).is_err());
    assert!(gen_synthetic(10, 4, 16, f64::NAN, 0).is_err());
}

fn nearest_template_accuracy(ds: &Dataset, templates: &Dataset) -> f64 {
    let mut correct = 0;
    for i in 0..ds.n {
        let x = ds.image(i);
        let best = (0..templates.n)
            .min_by_key(|&c| {
                templates.image(c).iter().zip(x).map(|(&t, &p)| (t as i64 - p as i64).pow(2)).sum::<i64>()
            })
            .unwrap();
        correct += (templates.label(best) == ds.label(i)) as usize;
    }
    correct as f64 / ds.n as f64
}

#[test]
fn nearest_template_classifier_is_accurate_at_low_noise() {
    let templates = class_templates(8, 32, 3).unwrap();
    let low = gen_synthetic(400, 8, 32, 0.1, 9).unwrap();
    assert!(nearest_template_accuracy(&low, &templates) > 0.95);
    // Harder data should actually be harder for the same matcher.
    let high = gen_synthetic(400, 8, 32, 2.0, 9).unwrap();
    assert!(nearest_template_accuracy(&high, &templates) < nearest_template_accuracy(&low, &templates));
}

#[test]
fn normalized_images_have_zero_mean_unit_std() {
    let ds = gen_synthetic(64, 4, 16, 1.0, 2).unwrap();
    let norm = Normalizer::fit(&ds);
    let all: Vec<usize> = (0..ds.n).collect();
    let x = ds.images::<f64>(&all, &norm).unwrap();
    assert_eq!(x.shape(), &[64, 3, 16, 16]);
    let plane = 16 * 16;
    for c in 0..3 {
        let vals: Vec<f64> = (0..ds.n).flat_map(|i| x.data()[(i * 3 + c) * plane..(i * 3 + c + 1) * plane].to_vec()).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-9);
    }
    let y = ds.one_hot::<f32>(&[0, 5]).unwrap();
    assert_eq!(y.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);

    let flat = gen_synthetic(8, 4, 8, 0.0, 0).unwrap();
    let flat = Dataset::new(1, 8, 8, 4, flat.labels.clone(), vec![7; 8 * 64]).unwrap();
    assert_eq!(Normalizer::fit(&flat).std, vec![1.0]);
}

#[test]
fn one_epoch_of_batches_covers_every_index_once() {
    let ds = gen_synthetic(103, 4, 8, 0.5, 1).unwrap();
    let norm = Normalizer::fit(&ds);
    let plan = BatchPlan::new(ds.n, 16, 7, 3).unwrap();
    assert_eq!(plan.len(), 7);
    let sizes: Vec<usize> = plan.chunks().map(<[usize]>::len).collect();
    assert_eq!(sizes, [16, 16, 16, 16, 16, 16, 7]);
    let seen: Vec<usize> = plan.chunks().flatten().copied().collect();
    assert_eq!(seen.iter().copied().collect::<BTreeSet<_>>(), (0..103).collect());
    assert_eq!(seen.len(), 103);

    assert_eq!(BatchPlan::new(ds.n, 16, 7, 3).unwrap(), plan);
    assert_ne!(BatchPlan::new(ds.n, 16, 7, 4).unwrap().order, plan.order);
    assert_ne!(BatchPlan::new(ds.n, 16, 8, 3).unwrap().order, plan.order);

    let batches: Vec<Batch<f32>> = batches(&ds, 16, 7, 3, &norm).unwrap().collect::<Result<_, _>>().unwrap();
    assert_eq!(batches.len(), 7);
    for (b, idx) in batches.iter().zip(plan.chunks()) {
        assert_eq!(b.indices, idx);
        assert_eq!(b.images.shape(), &[idx.len(), 3, 8, 8]);
        assert_eq!(b.targets.shape(), &[idx.len(), 4]);
        assert_eq!(b.labels, idx.iter().map(|&i| ds.label(i)).collect::<Vec<_>>());
    }

    let whole = BatchPlan::new(ds.n, ds.n, 1, 1).unwrap();
    assert_eq!(whole.len(), 1);
    assert!(BatchPlan::new(0, 1, 1, 1).is_err());
    assert!(BatchPlan::new(5, 6, 1, 1).is_err());
}
