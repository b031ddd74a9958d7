use locenc::encoders::EncoderKind;
use locenc::locbench::{
    evaluate_classifier, evaluate_regressor, load_dataset_csv, load_model, save_dataset_csv, save_model,
    synth_dataset, train_location_classifier, train_location_regressor, NetConfig, SynthKind, SynthParams,
    TrainedModel,
};
use locenc::{EncoderSpec, Split, Task, TrainConfig};

fn small_net() -> NetConfig {
    NetConfig {
        hidden: 64,
        depth: 1,
        embed_dim: 16,
        ..NetConfig::default()
    }
}

fn quick_train() -> TrainConfig {
    TrainConfig {
        epochs: 8,
        lr: 3e-3,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_embeddings_match_location_only() {
    let mut records = synth_dataset(SynthKind::SmoothField, 4000, &SynthParams::default(), 5).unwrap();
    let spec = EncoderSpec::new(EncoderKind::SphereC).with_scales(16, 0.03, 1.0);
    let (loc_only, _) = train_location_regressor(&records, &spec, &small_net(), &quick_train()).unwrap();
    for r in &mut records {
        r.image_embedding = Some(vec![0.0; 8]);
    }
    let (fused, _) = train_location_regressor(&records, &spec, &small_net(), &quick_train()).unwrap();
    let test: Vec<_> = records.iter().filter(|r| r.split == Split::Test).cloned().collect();
    let a = evaluate_regressor(&loc_only, &test).unwrap();
    let b = evaluate_regressor(&fused, &test).unwrap();
    assert_eq!(a.block, "location_only");
    assert_eq!(b.block, "fused");
    let (ra, rb) = (a.metrics.r2().unwrap(), b.metrics.r2().unwrap());
    assert!((ra - rb).abs() <= 0.05, "location-only {ra}, fused {rb}");
}

#[test]
fn csv_and_checkpoint_round_trip_preserve_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let records = synth_dataset(SynthKind::ClusterClasses, 1500, &SynthParams::default(), 9).unwrap();
    let path = dir.path().join("data.csv");
    save_dataset_csv(&path, &records, Task::Classification).unwrap();
    let loaded = load_dataset_csv(&path, Task::Classification).unwrap();
    assert_eq!(loaded, records);

    let spec = EncoderSpec::new(EncoderKind::Rbf);
    let (model, log) = train_location_classifier(&loaded, &spec, &small_net(), &quick_train()).unwrap();
    assert_eq!(log.epochs.len(), 8);
    let test: Vec<_> = loaded.iter().filter(|r| r.split == Split::Test).cloned().collect();
    let before = evaluate_classifier(&model, &test).unwrap();

    let ckpt = dir.path().join("m.tspm");
    save_model(&ckpt, &TrainedModel::Classifier(model)).unwrap();
    let TrainedModel::Classifier(back) = load_model(&ckpt).unwrap() else {
        panic!("expected a classifier");
    };
    let after = evaluate_classifier(&back, &test).unwrap();
    assert_eq!(before, after);
    assert!(before.location_only.top1().unwrap() > 0.5);
}
