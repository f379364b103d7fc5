use manigrad::io::{csv_append, csv_read, ntf_from_bytes, ntf_read, ntf_to_bytes, ntf_write, pgm_from_bytes, pgm_to_bytes};
use manigrad::models::file::{classifier_to_bytes, load_classifier, load_vae, save_classifier, save_vae, vae_to_bytes};
use manigrad::models::{Classifier, ClassifierArch, Vae, VaeArch};
use manigrad::{Error, Tensor};
use proptest::prelude::*;

proptest! {
    #[test]
    fn ntf_round_trips_bit_exactly(shape in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let n: usize = shape.iter().product();
        let mut rng = manigrad::rng::Rng::new(seed);
        let t = Tensor::new(shape, rng.normals(n, 10.0)).unwrap();
        let back = ntf_from_bytes(&ntf_to_bytes(&t).unwrap()).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn pgm_quantizes_within_half_a_level(values in prop::collection::vec(-1.0f64..=1.0, 12)) {
        let img = Tensor::new(vec![3, 4], values).unwrap();
        let back = pgm_from_bytes(&pgm_to_bytes(&img, -1.0, 1.0).unwrap()).unwrap();
        prop_assert!(back.data().iter().zip(img.data()).all(|(a, b)| (2.0 * a - 1.0 - b).abs() <= 1.0 / 255.0 + 1e-12));
    }
}

#[test]
fn truncated_ntf_is_rejected() {
    let bytes = ntf_to_bytes(&Tensor::zeros(&[2, 3])).unwrap();
    assert!(ntf_from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(ntf_from_bytes(b"nonsense").is_err());
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let t = Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap();
    let path = dir.path().join("t.ntf");
    ntf_write(&path, &t).unwrap();
    assert_eq!(ntf_read(&path).unwrap(), t);
    assert!(matches!(ntf_read(dir.path().join("missing.ntf")), Err(Error::Io { .. })));

    let csv = dir.path().join("rows.csv");
    csv_append(&csv, &["a", "b"], &["1".into(), "x".into()]).unwrap();
    csv_append(&csv, &["a", "b"], &["2".into(), "y".into()]).unwrap();
    let (header, rows) = csv_read(&csv).unwrap();
    assert_eq!(header, vec!["a", "b"]);
    assert_eq!(rows, vec![vec!["1", "x"], vec!["2", "y"]]);
    assert!(csv_append(&csv, &["a", "c"], &["3".into(), "z".into()]).is_err());
}

#[test]
fn models_round_trip_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let vae = Vae::init(&VaeArch::new(16, 3, vec![8]).unwrap(), 1).unwrap().into_trained();
    let vp = dir.path().join("vae.mgm");
    save_vae(&vp, &vae).unwrap();
    let loaded = load_vae(&vp).unwrap();
    assert_eq!(loaded, vae);
    assert_eq!(vae_to_bytes(&loaded).unwrap(), std::fs::read(&vp).unwrap());

    let arch = ClassifierArch { input_dim: 16, hidden: vec![8], num_classes: 3 };
    let clf = Classifier::from_net(Classifier::init(&arch, 2).unwrap().net().clone(), true).unwrap();
    let cp = dir.path().join("clf.mgm");
    save_classifier(&cp, &clf).unwrap();
    assert_eq!(classifier_to_bytes(&load_classifier(&cp).unwrap()).unwrap(), std::fs::read(&cp).unwrap());
    assert!(load_classifier(&vp).is_err());
}
