use std::fs;

use cdmafs::data::{
    generate_synthetic, load_dataset, normalize_unit_length, planted_informative, read_dense_csv, read_labels,
    read_sparse_coo, write_dense_csv, write_labels, write_sparse_coo, FileFormat, LoadOptions, SyntheticParams,
};
use cdmafs::Error;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matrix(seed: u64, n: usize, d: usize, density: f64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, d), |_| {
        if rng.random_bool(density) {
            rng.random_range(-1e3..1e3) * 10f64.powi(rng.random_range(-8..4))
        } else {
            0.0
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dense_and_sparse_files_round_trip(seed in any::<u64>(), n in 1usize..12, d in 1usize..9, density in 0.0f64..1.0) {
        let dir = tempfile::tempdir().unwrap();
        let m = matrix(seed, n, d, density);
        let dense = dir.path().join("m.csv");
        let sparse = dir.path().join("m.coo");
        write_dense_csv(&dense, m.view(), None).unwrap();
        write_sparse_coo(&sparse, m.view()).unwrap();
        for back in [read_dense_csv(&dense, false).unwrap(), read_sparse_coo(&sparse).unwrap()] {
            prop_assert_eq!(back.dim(), m.dim());
            for (a, b) in back.iter().zip(&m) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn normalization_is_idempotent(seed in any::<u64>(), n in 2usize..10, d in 1usize..6) {
        let ds = generate_synthetic(&SyntheticParams { n: n.max(2), clusters: 2, informative: d, noise: 1, seed, ..Default::default() }).unwrap();
        let (once, _) = normalize_unit_length(&ds);
        let (twice, zero) = normalize_unit_length(&once);
        prop_assert!(zero.is_empty());
        for (a, b) in once.views().iter().zip(twice.views()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
            for row in b.data().rows() {
                prop_assert!((row.dot(&row) - 1.0).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn zero_rows_stay_zero_and_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "0,0\n3,4\n").unwrap();
    fs::write(&b, "1,0\n0,2\n").unwrap();
    let ds = load_dataset(&[&a, &b], &LoadOptions::default()).unwrap();
    let (norm, zero) = normalize_unit_length(&ds);
    assert_eq!(zero.len(), 1);
    assert_eq!(norm.view(0).data().row(0).to_vec(), vec![0.0, 0.0]);
    assert_eq!(norm.view(0).data().row(1).to_vec(), vec![0.6, 0.8]);
}

#[test]
fn loads_mixed_files_with_labels_and_header() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let l = dir.path().join("labels.txt");
    fs::write(&a, "f0,f1\n1,2\n3,4\n5,6\n").unwrap();
    fs::write(&b, "g0\n7\n8\n9\n").unwrap();
    write_labels(&l, &[0, 1, 1]).unwrap();
    let ds = load_dataset(
        &[&a, &b],
        &LoadOptions {
            skip_header: true,
            label_path: Some(l.clone()),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!((ds.n(), ds.n_views()), (3, 2));
    assert_eq!(ds.view(1).n_features(), 1);
    assert_eq!(ds.labels(), Some(&[0, 1, 1][..]));
    assert_eq!(read_labels(&l).unwrap(), vec![0, 1, 1]);
}

#[test]
fn sparse_loader_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.coo");
    type Check = fn(&Error) -> bool;
    let cases: [(&str, Check); 5] = [
        ("", |e| matches!(e, Error::Parse { .. })),
        ("0,0,1\n", |e| matches!(e, Error::Parse { line: 1, .. })),
        ("%2 2\n0,0\n", |e| matches!(e, Error::Parse { line: 2, .. })),
        ("%2 2\n2,0,1\n", |e| matches!(e, Error::IndexOutOfRange { row: 2, .. })),
        ("%2 2\n0,0,nan\n", |e| matches!(e, Error::NonFinite { .. })),
    ];
    for (text, check) in cases {
        fs::write(&path, text).unwrap();
        let err = read_sparse_coo(&path).unwrap_err();
        assert!(check(&err), "{text:?}: {err}");
    }
    fs::write(&path, "%2 3\n% comment\n0,2,1.5\n0,2,0.5\n").unwrap();
    let m = read_sparse_coo(&path).unwrap();
    assert_eq!(m.dim(), (2, 3));
    assert_eq!(m[[0, 2]], 2.0);
    let missing = dir.path().join("absent.coo");
    let opts = LoadOptions {
        format: FileFormat::SparseCoo,
        ..Default::default()
    };
    assert!(matches!(load_dataset(&[&path, &missing], &opts), Err(Error::Io { .. })));
}

#[test]
fn dense_loader_errors() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "1,2\n3\n").unwrap();
    assert!(matches!(read_dense_csv(&a, false), Err(Error::Parse { line: 2, .. })));
    fs::write(&a, "1,x\n").unwrap();
    assert!(matches!(read_dense_csv(&a, false), Err(Error::Parse { line: 1, .. })));
    fs::write(&a, "1,2\n3,4\n").unwrap();
    fs::write(&b, "1\n2\n3\n").unwrap();
    assert!(matches!(
        load_dataset(&[&a, &b], &LoadOptions::default()),
        Err(Error::RowCountMismatch {
            view: 1,
            expected: 2,
            found: 3
        })
    ));
    assert!(matches!(
        load_dataset(&[&a], &LoadOptions::default()),
        Err(Error::TooFewViews(1))
    ));
}

#[test]
fn synthetic_generator_example() {
    let params = SyntheticParams {
        n: 60,
        informative: 4,
        noise: 6,
        views: 3,
        seed: 11,
        ..Default::default()
    };
    let ds = generate_synthetic(&params).unwrap();
    assert_eq!((ds.n(), ds.n_views()), (60, 3));
    assert_eq!(ds.n_classes(), Some(3));
    for planted in planted_informative(&ds) {
        assert_eq!(planted.len(), 4);
    }
    let again = generate_synthetic(&params).unwrap();
    assert_eq!(ds.view(2).data(), again.view(2).data());
}
