use rand::Rng;

use fusionet::label::ClassLabel;
use fusionet::oversample::{kmeans_smote, smote, OversampleConfig, OversampleMethod};
use fusionet::seed;

fn cfg(method: OversampleMethod) -> OversampleConfig {
    OversampleConfig {
        method,
        seed: 13,
        ..OversampleConfig::default()
    }
}

#[test]
fn separated_blobs_are_not_bridged() {
    let mut rng = seed::rng(2);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..200 {
        rows.push(vec![5.0 + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        labels.push(ClassLabel::Real);
    }
    for centre in [0.0, 10.0] {
        for _ in 0..30 {
            rows.push(vec![centre + rng.gen_range(-1.0..1.0), 8.0 + rng.gen_range(-1.0..1.0)]);
            labels.push(ClassLabel::Fake);
        }
    }
    let aug = kmeans_smote(&rows, &labels, 1.0, &cfg(OversampleMethod::KmeansSmote)).unwrap();
    assert_eq!(aug.synthetic().len(), 140);
    for s in aug.synthetic() {
        let in_left = (-1.0..=1.0).contains(&s[0]);
        let in_right = (9.0..=11.0).contains(&s[0]);
        assert!(in_left || in_right, "synthetic point {s:?} bridges the blobs");
        assert!((7.0..=9.0).contains(&s[1]));
    }
}

#[test]
fn single_cluster_reduces_to_plain_smote() {
    let mut rng = seed::rng(8);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..80 {
        rows.push(vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]);
        labels.push(if i % 4 == 0 { ClassLabel::Fake } else { ClassLabel::Real });
    }
    let mut km = cfg(OversampleMethod::KmeansSmote);
    km.clusters = 1;
    km.imbalance_threshold = 0.0;
    let a = kmeans_smote(&rows, &labels, 1.0, &km).unwrap();
    let b = smote(&rows, &labels, 1.0, &cfg(OversampleMethod::Smote)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn seeded_runs_repeat() {
    let mut rng = seed::rng(4);
    let rows: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
    let labels: Vec<ClassLabel> = (0..60)
        .map(|i| if i < 15 { ClassLabel::Fake } else { ClassLabel::Real })
        .collect();
    for method in [OversampleMethod::Smote, OversampleMethod::KmeansSmote] {
        let c = cfg(method);
        let a = fusionet::oversample::oversample(&rows, &labels, 1.0, &c).unwrap();
        let b = fusionet::oversample::oversample(&rows, &labels, 1.0, &c).unwrap();
        assert_eq!(a, b);
    }
}
