use std::path::Path;

use fedlens::formats::{decode_params, encode_params, load_idx, FeatureDump};
use fedlens::CliError;
use fedlens_core::linalg::Matrix;
use fedlens_core::metrics::Phase;
use fedlens_core::nn::{ParamVector, TensorSlot};
use proptest::prelude::*;

fn idx_images(images: &[[[u8; 3]; 2]]) -> Vec<u8> {
    let mut out = vec![0, 0, 8, 3];
    for d in [images.len() as u32, 2, 3] {
        out.extend_from_slice(&d.to_be_bytes());
    }
    for img in images {
        for row in img {
            out.extend_from_slice(row);
        }
    }
    out
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 8, 1];
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn fixture(dir: &Path, images: &[[[u8; 3]; 2]], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
    let (i, l) = (dir.join("images.idx"), dir.join("labels.idx"));
    std::fs::write(&i, idx_images(images)).unwrap();
    std::fs::write(&l, idx_labels(labels)).unwrap();
    (i, l)
}

const TWO: [[[u8; 3]; 2]; 2] = [[[0, 17, 255], [3, 4, 5]], [[9, 8, 7], [128, 1, 2]]];

#[test]
fn idx_pixels_are_recovered_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let (i, l) = fixture(tmp.path(), &TWO, &[1, 0]);
    let ds = load_idx(&i, &l, None, false).unwrap();
    assert_eq!(ds.train.x.shape(), (2, 6));
    assert_eq!(ds.train.x.row(0), &[0.0, 17.0, 255.0, 3.0, 4.0, 5.0]);
    assert_eq!(ds.train.x.row(1), &[9.0, 8.0, 7.0, 128.0, 1.0, 2.0]);
    assert_eq!(ds.train.labels, vec![1, 0]);
    assert_eq!(ds.train.num_classes, 2);
    assert!(ds.test.is_empty());

    let ds = load_idx(&i, &l, None, true).unwrap();
    assert_eq!(ds.train.x.row(0)[1], 17.0 / 255.0);
    assert_eq!(ds.train.x.row(0)[2], 1.0);
}

#[test]
fn idx_max_per_class_caps_each_class() {
    let tmp = tempfile::tempdir().unwrap();
    let images = [TWO[0], TWO[1], TWO[0], TWO[1], TWO[0]];
    let (i, l) = fixture(tmp.path(), &images, &[0, 1, 0, 2, 1]);
    let ds = load_idx(&i, &l, Some(1), false).unwrap();
    assert!(ds.train.len() <= 3);
    assert_eq!(ds.train.class_counts(), vec![1, 1, 1]);
}

fn format_offset(err: CliError) -> usize {
    match err {
        CliError::Format { offset, .. } => offset,
        other => panic!("expected a format error, got {other}"),
    }
}

#[test]
fn idx_errors_carry_byte_offsets() {
    let tmp = tempfile::tempdir().unwrap();
    let (i, l) = fixture(tmp.path(), &TWO, &[1, 0]);
    // images passed as labels: wrong magic
    assert_eq!(format_offset(load_idx(&l, &i, None, false).unwrap_err()), 0);

    let mut truncated = idx_images(&TWO);
    truncated.truncate(truncated.len() - 2);
    std::fs::write(&i, truncated).unwrap();
    assert_eq!(format_offset(load_idx(&i, &l, None, false).unwrap_err()), 16);

    std::fs::write(&i, [0u8, 0, 8]).unwrap();
    assert_eq!(format_offset(load_idx(&i, &l, None, false).unwrap_err()), 0);
}

fn layout_strategy() -> impl Strategy<Value = ParamVector> {
    prop::collection::vec(prop::collection::vec(1usize..5, 1..3), 1..5).prop_flat_map(|shapes| {
        let total: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, total).prop_map(move |values| {
            let mut offset = 0;
            let layout = shapes
                .iter()
                .enumerate()
                .map(|(i, shape)| {
                    let slot = TensorSlot { layer: i + 1, shape: shape.clone(), offset };
                    offset += slot.numel();
                    slot
                })
                .collect();
            ParamVector::from_parts(layout, values).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn params_round_trip_bit_exactly(p in layout_strategy()) {
        let back = decode_params(&encode_params(&p)).unwrap();
        prop_assert_eq!(back.layout(), p.layout());
        let a: Vec<u64> = p.values().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.values().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn feature_dumps_round_trip(n in 1usize..20, d in 1usize..10, round in 0usize..1000, seed: u64) {
        let values: Vec<f64> = (0..n * d).map(|i| ((seed as f64) * 1e-9 + i as f64).sin() * 50.0).collect();
        let m = Matrix::new(n, d, values).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 7).collect();
        let dump = FeatureDump::new(&m, &labels, d % 4, Phase::Pre, round).unwrap();
        let back = FeatureDump::decode(&dump.encode()).unwrap();
        prop_assert_eq!(&back, &dump);
        let fm = back.to_feature_matrix(7).unwrap();
        for (a, b) in fm.values.as_slice().iter().zip(m.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn truncated_params_never_decode(p in layout_strategy(), cut in 1usize..64) {
        let bytes = encode_params(&p);
        let keep = bytes.len().saturating_sub(cut);
        let (offset, _) = decode_params(&bytes[..keep]).unwrap_err();
        prop_assert!(offset <= keep);
    }
}
