//! Model files on disk.

use iflow_core::fixedq::Precision;
use iflow_core::fixtures::{demo_model, random_model};
use iflow_core::layers::Prior;
use iflow_core::model::{load_model, save_model, FlowModel};
use iflow_core::Error;

#[test]
fn saved_models_reload_identically() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..10 {
        let m = random_model(seed, 1 + seed as usize % 4, 5, Precision::default()).unwrap();
        let p = dir.path().join(format!("{seed}.json"));
        save_model(&m, &p).unwrap();
        let back = load_model(&p).unwrap();
        assert_eq!(back.content_hash(), m.content_hash());
        assert_eq!(back.layers(), m.layers());
        assert_eq!(std::fs::read_to_string(&p).unwrap(), m.canonical());
    }
}

#[test]
fn decimal_weights_load_to_the_same_model() {
    let text = r#"{
      "format": "iflow.model/1",
      "precision": {"k": 28, "h": 12, "s": 65536, "b": 4},
      "prior": {"kind": "logistic", "loc": 0, "scale": 1},
      "layers": [
        {"kind": "elementwise", "fns": [{"fn": "affine", "scale": 0.015625, "shift": -2}]},
        {"kind": "channel_scale", "lambdas": [0.5, 2]}
      ]
    }"#;
    let m = FlowModel::parse(text).unwrap();
    let again = FlowModel::parse(&m.canonical()).unwrap();
    assert_eq!(m.content_hash(), again.content_hash());
    assert_eq!(m.channels(), Some(2));
    assert!(matches!(m.prior(), Prior::Logistic { .. }));
}

#[test]
fn errors_name_the_offending_field() {
    let bad = r#"{
      "format": "iflow.model/1",
      "precision": {"k": 28, "h": 12, "s": 65536, "b": 4},
      "prior": {"kind": "logistic", "loc": 0, "scale": 1},
      "layers": [{"kind": "conv1x1", "weight": [[1, 0], [0, "x"]]}]
    }"#;
    match FlowModel::parse(bad) {
        Err(Error::Model { path, .. }) | Err(Error::Schema { path, .. }) => assert!(path.contains("layers[0]"), "{path}"),
        other => panic!("{other:?}"),
    }
    let missing = std::path::Path::new("/nonexistent/model.json");
    assert!(matches!(load_model(missing), Err(Error::Io(_))));
}

#[test]
fn precision_is_part_of_the_hash() {
    let a = demo_model(3, (0, 256), Precision::default()).unwrap();
    let b = a.with_precision(Precision::new(24, 10, 1 << 16, 4).unwrap()).unwrap();
    assert_ne!(a.content_hash(), b.content_hash());
    assert_eq!(a.layers(), b.layers());
}
