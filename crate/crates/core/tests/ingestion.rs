mod common;

use std::fmt::Write as _;
use std::fs;

use common::*;
use specdiff::classifier::{eeg_bands, fit, predict_all, Method, TuningConfig};
use specdiff::io::{load_dataset, read_model, write_model};
use specdiff::{AdamConfig, ClassLabel};

/// A 30-channel recording layout at T = 384 (e.g. 3 s at 128 Hz), written
/// as plain text the way an external exporter would.
#[test]
fn thirty_channel_recordings_load_fit_and_predict() {
    let (p, len, per_class) = (30, 384, 6);
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("series")).unwrap();
    let mut labels = String::from("id,label\n");
    let mut r = rng(384);
    for i in 0..2 * per_class + 2 {
        let id = format!("rec{i:02}");
        let label = match i {
            _ if i >= 2 * per_class => "",
            _ if i % 2 == 0 => "1",
            _ => "2",
        };
        writeln!(labels, "{id},{label}").unwrap();
        let mut text = String::new();
        let gain = if label == "2" { 1.5 } else { 1.0 };
        for _ in 0..len {
            let row: Vec<String> = (0..p).map(|c| format!("{:.6}", 10.0 + gain * normal(&mut r) * (1.0 + c as f64 / p as f64))).collect();
            writeln!(text, "{}", row.join(",")).unwrap();
        }
        fs::write(dir.path().join("series").join(format!("{id}.csv")), text).unwrap();
    }
    fs::write(dir.path().join("labels.csv"), labels).unwrap();

    let data = load_dataset(dir.path(), true).unwrap();
    assert_eq!(data.samples.len(), 2 * per_class + 2);
    assert!(data.truth.is_none());
    assert!(data.samples.iter().all(|s| s.channels() == p && s.len() == len));
    // centering removed the offset of 10
    let mean: f64 = data.samples[0].values().row(0).mean();
    assert!(mean.abs() < 1e-12);
    let grid = data.grid().unwrap();
    assert_eq!(grid.n_freq(), 191);

    let (labeled, unlabeled) = data.samples.split_at(2 * per_class);
    assert!(unlabeled.iter().all(|s| s.label().is_none()));
    let tuning = TuningConfig {
        lambda_grid: vec![0.3],
        refine: 0,
        adam: AdamConfig {
            max_iters: 200,
            ..AdamConfig::default()
        },
        ..TuningConfig::default()
    };
    let model = fit(labeled, Method::Dtrace, &grid, 5, &tuning).unwrap().model;
    assert_eq!(model.channels(), p);
    let preds = predict_all(&model, &data.samples).unwrap();
    assert_eq!(preds.len(), data.samples.len());
    let path = dir.path().join("model.json");
    write_model(&path, &model).unwrap();
    assert_eq!(read_model(&path).unwrap(), model);

    // 128 Hz over 384 steps: 1/3 Hz per index
    let bands = eeg_bands(128.0, &grid).unwrap();
    let alpha = bands.iter().find(|b| b.name == "alpha").unwrap();
    assert_eq!((alpha.first, alpha.last), (24, 38));
    assert!(labeled.iter().filter(|s| s.label() == Some(ClassLabel::One)).count() == per_class);
}
