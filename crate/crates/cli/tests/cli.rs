use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn locenc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_locenc"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = locenc(dir, args);
    assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const QUICK_TRAIN: &[&str] = &["train", "--epochs", "3", "--hidden", "32", "--depth", "1", "--scales", "8", "--lr", "3e-3"];

fn synth_and_train(dir: &Path, extra_synth: &[&str]) {
    let mut args = vec!["--seed", "7", "synth", "--kind", "sector_classes", "--n", "600"];
    args.extend_from_slice(extra_synth);
    ok(dir, &args);
    let mut args = vec!["--seed", "7"];
    args.extend_from_slice(QUICK_TRAIN);
    ok(dir, &args);
}

#[test]
fn synth_writes_requested_rows_and_labels() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["--seed", "7", "synth", "--kind", "sector_classes", "--n", "1000", "--classes", "8"]);
    let text = fs::read_to_string(t.path().join("out/dataset.csv")).unwrap();
    let mut labels = std::collections::BTreeSet::new();
    let mut rows = 0;
    for line in text.lines().skip(1) {
        labels.insert(line.rsplit(',').next().unwrap().to_owned());
        rows += 1;
    }
    assert_eq!(rows, 1000);
    assert_eq!(labels.len(), 8);
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let t = tempfile::tempdir().unwrap();
    let args = ["--seed", "3", "synth", "--kind", "smooth_field", "--n", "300"];
    let read = |f: &str| fs::read(t.path().join("out").join(f)).unwrap();
    ok(t.path(), &args);
    let first = (read("dataset.csv"), read("config.json"));
    ok(t.path(), &args);
    assert_eq!(first, (read("dataset.csv"), read("config.json")));
}

#[test]
fn zero_rows_is_a_usage_error() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&locenc(t.path(), &["synth", "--n", "0"])), 2);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("c.json"), r#"{"seed": 1, "encodr": {}}"#).unwrap();
    let o = locenc(t.path(), &["--config", "c.json", "synth"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("encodr"));
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let t = tempfile::tempdir().unwrap();
    let o = locenc(t.path(), &["train", "--dataset", "nope.csv", "--task", "classify"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.csv"));
}

#[test]
fn train_writes_checkpoint_log_and_config() {
    let t = tempfile::tempdir().unwrap();
    synth_and_train(t.path(), &[]);
    let out = t.path().join("out");
    for f in ["model.tspm", "model.tspm.json", "train_log.csv", "config.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,loss"));
    assert_eq!(log.lines().count(), 4);
    let cfg = json(&out.join("config.json"));
    assert_eq!(cfg["task"], "classify");
    assert_eq!(cfg["encoder"]["scales"], 8);
    assert_eq!(cfg["train"]["epochs"], 3);
}

#[test]
fn resolved_config_reproduces_the_run() {
    let t = tempfile::tempdir().unwrap();
    synth_and_train(t.path(), &[]);
    fs::copy(t.path().join("out/config.json"), t.path().join("resolved.json")).unwrap();
    ok(t.path(), &["--config", "resolved.json", "--out", "again", "train"]);
    assert_eq!(fs::read(t.path().join("out/model.tspm")).unwrap(), fs::read(t.path().join("again/model.tspm")).unwrap());
}

#[test]
fn nan_loss_is_a_runtime_error_naming_the_step() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["synth", "--kind", "smooth_field", "--n", "200"]);
    let o = locenc(t.path(), &["train", "--lr", "1e300", "--epochs", "2", "--hidden", "16", "--scales", "4"]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("step"), "{err}");
}

#[test]
fn evaluate_without_images_reports_location_only() {
    let t = tempfile::tempdir().unwrap();
    synth_and_train(t.path(), &[]);
    ok(t.path(), &["evaluate"]);
    let m = json(&t.path().join("out/metrics.json"));
    let keys: Vec<&String> = m.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["location_only"]);
    let block: Vec<&String> = m["location_only"].as_object().unwrap().keys().collect();
    assert_eq!(block.len(), 5);
    for k in ["task", "n", "top1", "top3", "mrr"] {
        assert!(m["location_only"].get(k).is_some(), "{k}");
    }
    let preds = fs::read_to_string(t.path().join("out/predictions.csv")).unwrap();
    assert_eq!(preds.lines().next(), Some("id,lon,lat,hit1,rank,abs_err"));
}

#[test]
fn uniform_image_prior_leaves_metrics_unchanged() {
    let t = tempfile::tempdir().unwrap();
    synth_and_train(t.path(), &[]);
    let text = fs::read_to_string(t.path().join("out/dataset.csv")).unwrap();
    let mut lp = String::from("id,logp_0,logp_1,logp_2,logp_3,logp_4,logp_5,logp_6,logp_7\n");
    let u = -(8f64).ln();
    for line in text.lines().skip(1) {
        lp.push_str(line.split(',').next().unwrap());
        for _ in 0..8 {
            lp.push_str(&format!(",{u}"));
        }
        lp.push('\n');
    }
    fs::write(t.path().join("uniform.csv"), lp).unwrap();
    ok(t.path(), &["evaluate", "--image-logprobs", "uniform.csv"]);
    let m = json(&t.path().join("out/metrics.json"));
    for k in ["top1", "top3", "mrr"] {
        let a = m["location_only"][k].as_f64().unwrap();
        let b = m["combined"][k].as_f64().unwrap();
        assert!((a - b).abs() <= 1e-12, "{k}: {a} vs {b}");
    }
}

#[test]
fn synthetic_image_prior_is_picked_up() {
    let t = tempfile::tempdir().unwrap();
    synth_and_train(t.path(), &["--image-accuracy", "0.55"]);
    ok(t.path(), &["evaluate", "--image-logprobs", "out/image_logprobs.csv"]);
    let m = json(&t.path().join("out/metrics.json"));
    assert!(m.get("image_only").is_some() && m.get("combined").is_some());
}

#[test]
fn classification_file_on_regression_task_is_a_usage_error() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["synth", "--kind", "sector_classes", "--n", "100"]);
    assert_eq!(code(&locenc(t.path(), &["train", "--task", "regress"])), 2);
    synth_and_train(t.path(), &[]);
    assert_eq!(code(&locenc(t.path(), &["evaluate", "--task", "regress"])), 2);
}

#[test]
fn encoder_mismatch_is_a_usage_error() {
    let t = tempfile::tempdir().unwrap();
    synth_and_train(t.path(), &[]);
    let o = locenc(t.path(), &["evaluate", "--encoder", "grid"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("mismatch"));
}

fn write_predictions(path: &Path, rows: &[(f64, f64, bool)]) {
    let mut s = String::from("id,lon,lat,hit1,rank,abs_err\n");
    for (i, (lon, lat, hit)) in rows.iter().enumerate() {
        s.push_str(&format!("p{i},{lon},{lat},{},{},\n", u8::from(*hit), if *hit { 1 } else { 2 }));
    }
    fs::write(path, s).unwrap();
}

fn grid_points(n: usize) -> Vec<(f64, f64)> {
    (0..n).map(|i| (-170.0 + (i % 35) as f64 * 10.0, -60.0 + (i / 35) as f64 * 5.0)).collect()
}

#[test]
fn perfect_predictions_report_no_low_perf() {
    let t = tempfile::tempdir().unwrap();
    let rows: Vec<_> = grid_points(50).into_iter().map(|(a, b)| (a, b, true)).collect();
    write_predictions(&t.path().join("p.csv"), &rows);
    ok(t.path(), &["geobias", "--predictions", "p.csv"]);
    let g = json(&t.path().join("out/geobias.json"));
    assert_eq!(g["no_low_perf"], true);
    assert_eq!(g["radius_km"], 100.0);
}

#[test]
fn zero_radius_is_a_usage_error() {
    let t = tempfile::tempdir().unwrap();
    let rows: Vec<_> = grid_points(50).into_iter().enumerate().map(|(i, (a, b))| (a, b, i % 3 != 0)).collect();
    write_predictions(&t.path().join("p.csv"), &rows);
    assert_eq!(code(&locenc(t.path(), &["geobias", "--predictions", "p.csv", "--radius-km", "0"])), 2);
}

#[test]
fn geobias_is_byte_identical_across_runs() {
    let t = tempfile::tempdir().unwrap();
    let rows: Vec<_> = grid_points(200).into_iter().enumerate().map(|(i, (a, b))| (a, b, i % 3 != 0)).collect();
    write_predictions(&t.path().join("p.csv"), &rows);
    for out in ["a", "b"] {
        ok(
            t.path(),
            &["--seed", "5", "--out", out, "geobias", "--predictions", "p.csv", "--radius-km", "2000", "--n-permutations", "49"],
        );
    }
    for f in ["geobias.json", "geobias_centers.csv"] {
        assert_eq!(fs::read(t.path().join("a").join(f)).unwrap(), fs::read(t.path().join("b").join(f)).unwrap(), "{f}");
    }
    let g = json(&t.path().join("a/geobias.json"));
    for k in ["base_mean", "rel_mean", "n_centers", "n_skipped", "radius_km", "k", "n_permutations", "seed", "low_perf_rule"] {
        assert!(g.get(k).is_some(), "{k}");
    }
    let centers = fs::read_to_string(t.path().join("a/geobias_centers.csv")).unwrap();
    assert_eq!(centers.lines().next(), Some("center_id,lon,lat,n_neighborhood,base,rel,skipped"));
}

#[test]
fn hotspot_finds_planted_cluster() {
    let t = tempfile::tempdir().unwrap();
    let rows: Vec<_> = grid_points(350)
        .into_iter()
        .map(|(a, b)| (a, b, !(a.abs() <= 30.0 && (b - 0.0).abs() <= 15.0)))
        .collect();
    write_predictions(&t.path().join("p.csv"), &rows);
    ok(t.path(), &["hotspot", "--predictions", "p.csv", "--k", "8"]);
    let text = fs::read_to_string(t.path().join("out/hotspot.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "id,lon,lat,z,bin");
    assert_eq!(lines.len() - 1, rows.len());
    let hot = lines.iter().filter(|l| l.ends_with(",hot95") || l.ends_with(",hot99")).count();
    assert!(hot > 0);
}

#[test]
fn constant_hits_fail_hotspot_with_zero_variance() {
    let t = tempfile::tempdir().unwrap();
    let rows: Vec<_> = grid_points(30).into_iter().map(|(a, b)| (a, b, true)).collect();
    write_predictions(&t.path().join("p.csv"), &rows);
    let o = locenc(t.path(), &["hotspot", "--predictions", "p.csv"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("zero variance"));
}

#[test]
fn too_few_points_fail_hotspot() {
    let t = tempfile::tempdir().unwrap();
    write_predictions(&t.path().join("p.csv"), &[(0.0, 0.0, true), (1.0, 1.0, false)]);
    assert_eq!(code(&locenc(t.path(), &["hotspot", "--predictions", "p.csv", "--k", "1"])), 1);
}
