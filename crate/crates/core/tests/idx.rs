use nestbox_core::data::{encode_idx, load_idx, parse_idx_pair, synth_blobs, write_idx};
use nestbox_core::{Error, Split};

#[test]
fn blobs_round_trip_through_idx_files() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    let ds = synth_blobs(4, 10, 6, 3.0, 5, Split::Train).unwrap();
    write_idx(&ds, &img, &lab).unwrap();
    let back = load_idx(&img, &lab, Split::Train).unwrap();
    assert_eq!(back.labels, ds.labels);
    assert_eq!(back.shape, ds.shape);
    assert_eq!(back.classes, 4);
    for (a, b) in back.features.iter().zip(ds.features.iter()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
    }
    // Quantized values survive a second trip unchanged.
    write_idx(&back, &img, &lab).unwrap();
    assert_eq!(load_idx(&img, &lab, Split::Train).unwrap().features, back.features);
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_idx(&dir.path().join("nope"), &dir.path().join("nada"), Split::Test).unwrap_err();
    assert!(matches!(err, Error::Io(_)));
}

#[test]
fn truncated_and_mismatched_files_are_rejected() {
    let images = encode_idx(&[3, 2, 2], &[7; 12]);
    let labels = encode_idx(&[3], &[0, 1, 2]);
    assert!(parse_idx_pair(&images, &labels, Split::Train).is_ok());
    assert!(matches!(
        parse_idx_pair(&images[..images.len() - 1], &labels, Split::Train),
        Err(Error::Format(_))
    ));
    let short = encode_idx(&[2], &[0, 1]);
    match parse_idx_pair(&images, &short, Split::Train) {
        Err(Error::Format(m)) => assert!(m.contains("3 images but 2 labels"), "{m}"),
        other => panic!("{other:?}"),
    }
    let mut trailing = images.clone();
    trailing.push(0);
    assert!(parse_idx_pair(&trailing, &labels, Split::Train).is_err());
}

#[test]
fn well_separated_blobs_are_learned_by_a_linear_model() {
    use nestbox_core::training::{accuracy_at, train_plain, TaskData};
    use nestbox_core::{Architecture, Heads, Network};

    let ds = synth_blobs(3, 100, 2, 10.0, 4, Split::Train).unwrap();
    let idx: Vec<usize> = (0..ds.len()).collect();
    let data = TaskData::new(&ds.features, &idx, &ds.labels, None).unwrap();
    let (mut net, mut params) = Network::initialize(Architecture::mlp(2, &[], 3, Heads::Shared), 0).unwrap();
    train_plain(&mut net, &mut params, &data, 300, 32, 0.5, 0, 0, &mut |_, _, _| {}).unwrap();
    assert_eq!(accuracy_at(&net, &params, &data).unwrap(), 1.0);
}
