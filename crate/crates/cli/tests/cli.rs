use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use faf_core::dataset;
use faf_core::model::{ForceModel, ModelConfig};

const TINY: [&str; 8] = ["--input-size", "16", "--embed-dim", "32", "--depth", "1", "--heads", "2"];

fn faf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_faf"))
        .current_dir(dir)
        .env("FAF_THREADS", "2")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = faf(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn small_dataset(dir: &Path, out: &str, profiles: &[&str]) {
    let mut args = vec!["dataset", "gen", "--count", "1", "--step-mm", "0.5", "--out", out];
    for p in profiles {
        args.extend(["--profile", p]);
    }
    ok(dir, &args);
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn zero_count_gives_an_empty_container() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["dataset", "gen", "--count", "0", "--out", "o"]);
    assert!(dataset::load(&d.path().join("o/dataset.faf")).unwrap().is_empty());
}

#[test]
fn generation_is_reproducible_from_the_seed() {
    let d = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(d.path(), &["dataset", "gen", "--count", "1", "--step-mm", "0.5", "--seed", "7", "--out", out]);
    }
    ok(d.path(), &["dataset", "gen", "--count", "1", "--step-mm", "0.5", "--seed", "8", "--out", "c"]);
    let read = |o: &str| fs::read(d.path().join(o).join("dataset.faf")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn balanced_stats_report_level_histograms() {
    let d = tempfile::tempdir().unwrap();
    let gen = ["dataset", "gen", "--count", "40", "--indenter", "big-sphere", "--indenter", "cube", "--out", "o"];
    ok(d.path(), &gen);
    ok(d.path(), &["dataset", "balance", "--input", "o/dataset.faf", "--out", "o"]);
    let stats = ok(d.path(), &["dataset", "stats", "--input", "o/balanced.faf", "--out", "o"]);
    let ratios: Vec<f64> = stats
        .lines()
        .filter_map(|l| l.split_once("ratio in [0.5, 12] N = "))
        .map(|(_, r)| r.parse().unwrap())
        .collect();
    assert_eq!(ratios.len(), 2, "{stats}");
    assert!(ratios.iter().all(|&r| r <= 1.2), "{stats}");
    assert!(fs::read_to_string(d.path().join("o/histogram.csv")).unwrap().starts_with("indenter,"));
}

#[test]
fn zero_epochs_store_the_initial_model() {
    let d = tempfile::tempdir().unwrap();
    small_dataset(d.path(), "o", &[]);
    let mut args = vec!["train", "--data", "o/dataset.faf", "--epochs", "0", "--seed", "3", "--out", "o"];
    args.extend(TINY);
    ok(d.path(), &args);
    let init = ForceModel::new(ModelConfig {
        input_size: 16,
        embed_dim: 32,
        depth: 1,
        heads: 2,
        seed: 3,
        ..ModelConfig::default()
    })
    .unwrap();
    let reference = d.path().join("init.fafw");
    init.save(&reference).unwrap();
    assert_eq!(fs::read(reference).unwrap(), fs::read(d.path().join("o/model.fafw")).unwrap());
}

#[test]
fn oracle_evaluation_has_zero_error() {
    let d = tempfile::tempdir().unwrap();
    small_dataset(d.path(), "o", &["sensor1-gel1", "sensor2-gel3"]);
    let stdout = ok(d.path(), &["eval", "--data", "o/dataset.faf", "--estimator", "oracle", "--out", "o"]);
    assert!(stdout.contains("mean normalized error: 0\n"));
    let grid = csv_rows(&d.path().join("o/eval_grid.csv"));
    assert_eq!(grid.len(), 2);
    for row in grid {
        assert!(row[1..].iter().filter(|c| !c.is_empty()).all(|c| c.parse::<f64>().unwrap() == 0.0), "{row:?}");
    }
}

#[test]
fn training_then_calibration_round_trip() {
    let d = tempfile::tempdir().unwrap();
    small_dataset(d.path(), "o", &[]);
    let mut args = vec!["train", "--data", "o/dataset.faf", "--epochs", "1", "--batch-size", "8", "--out", "o"];
    args.extend(TINY);
    ok(d.path(), &args);
    let losses = csv_rows(&d.path().join("o/loss.csv"));
    assert_eq!(losses.len(), 1);

    let calib = ["calibrate", "--checkpoint", "o/model.fafw", "--samples", "8", "--holdout", "8", "--out", "c"];
    ok(d.path(), &[&calib[..], &["--steps", "0"]].concat());
    assert_eq!(fs::read(d.path().join("o/model.fafw")).unwrap(), fs::read(d.path().join("c/calibrated.fafw")).unwrap());
    let rows = csv_rows(&d.path().join("c/calibration.csv"));
    assert_eq!(rows[0][2], rows[1][2]);

    ok(d.path(), &[&calib[..], &["--steps", "5", "--eval", "o/dataset.faf"]].concat());
    assert_ne!(fs::read(d.path().join("o/model.fafw")).unwrap(), fs::read(d.path().join("c/calibrated.fafw")).unwrap());
    let forgetting = csv_rows(&d.path().join("c/forgetting.csv"));
    assert_eq!(forgetting.len(), 1);
    assert_eq!(forgetting[0][0], "sensor1-gel1");
}

#[test]
fn ablation_emits_one_row_per_variant() {
    let d = tempfile::tempdir().unwrap();
    small_dataset(d.path(), "o", &[]);
    let mut args = vec![
        "ablate", "--data", "o/dataset.faf", "--test", "o/dataset.faf", "--epochs", "1", "--batch-size", "16", "--out", "o",
    ];
    args.extend(TINY);
    ok(d.path(), &args);
    let rows = csv_rows(&d.path().join("o/ablation.csv"));
    let names: Vec<_> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["conv-rd", "vit-f", "vit-r", "vit-rd"]);
}

#[test]
fn oracle_weighing_stays_within_quantization() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["task", "weigh", "--estimator", "oracle", "--duration", "4", "--out", "o"]);
    let rows = csv_rows(&d.path().join("o/weigh.csv"));
    assert_eq!(rows.len(), 6);
    let mean = rows.last().unwrap();
    assert_eq!(mean[0], "mean");
    let bound = 0.04 / (0.2283 * 9.81);
    assert!(mean[6].parse::<f64>().unwrap() <= bound);
    assert!(fs::read_to_string(d.path().join("o/weigh.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn deformation_reports_the_target_row() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["task", "deform", "--estimator", "oracle", "--target", "1.74", "--out", "o"]);
    let rows = csv_rows(&d.path().join("o/deform.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "1.74");
    let achieved: f64 = rows[0][2].parse().unwrap();
    assert!((achieved - 1.74).abs() <= 0.05 + 1e-12);
}

#[test]
fn errors_map_to_documented_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| faf(d.path(), args).status.code().unwrap();
    assert_eq!(code(&["dataset", "stats", "--input", "missing.faf"]), 12);
    assert_eq!(code(&["dataset", "gen", "--count", "0", "--profile", "nope"]), 3);
    fs::write(d.path().join("bad.faf"), b"FAF2....").unwrap();
    assert_eq!(code(&["dataset", "stats", "--input", "bad.faf"]), 4);
    assert_eq!(code(&["task", "weigh", "--estimator", "model"]), 3);
    assert_eq!(code(&["task", "deform", "--estimator", "oracle", "--target", "40", "--step-mm", "2"]), 10);
    assert_eq!(code(&["task", "deform", "--estimator", "oracle", "--target=-1"]), 6);
    assert_eq!(code(&["train"]), 2);
    let help = String::from_utf8(faf(d.path(), &["--help"]).stdout).unwrap();
    assert!(help.contains("10  task failed"));
}
