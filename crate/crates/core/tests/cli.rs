use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::Value;

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_shiftscan"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

fn write_gaussian(path: &Path, n: usize, d: usize, shift: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let header: Vec<String> = (0..d).map(|j| format!("c{j}")).collect();
    let mut text = header.join(",") + "\n";
    for _ in 0..n {
        let row: Vec<String> = (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (z + shift).to_string()
            })
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

fn write_images(dir: &Path, count: usize) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut manifest = String::from("path\n");
    for i in 0..count {
        let px: Vec<u8> = (0..64 * 64).map(|_| rng.random()).collect();
        image::GrayImage::from_raw(64, 64, px)
            .unwrap()
            .save(dir.join(format!("img{i}.png")))
            .unwrap();
        manifest.push_str(&format!("img{i}.png\n"));
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest).unwrap();
    path
}

#[test]
fn features_three_images_and_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_images(dir.path(), 3);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        let (code, err) = run(&["features", "--side", "64", "-o", p(out), p(&manifest)]);
        assert_eq!(code, 0, "{err}");
    }
    let lines = data_lines(&a);
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().all(|l| l.split(',').count() == 417));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let sidecar = read_json(&dir.path().join("a.csv.json"));
    assert_eq!(sidecar["features"]["feature_count"], 417);
    assert_eq!(sidecar["run"]["seed"], 0);
}

#[test]
fn features_skip_bad() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_images(dir.path(), 2);
    fs::write(dir.path().join("bad.png"), b"not an image").unwrap();
    fs::write(&manifest, "path\nimg0.png\nbad.png\nimg1.png\n").unwrap();
    let out = dir.path().join("f.csv");

    let (code, err) = run(&["features", "--side", "64", "-o", p(&out), p(&manifest)]);
    assert_eq!(code, 1);
    assert!(err.contains("bad.png"), "{err}");

    let (code, err) = run(&[
        "features",
        "--side",
        "64",
        "--skip-bad",
        "-o",
        p(&out),
        p(&manifest),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(err.contains("bad.png"), "{err}");
    assert_eq!(data_lines(&out).len(), 3);
}

#[test]
fn shift_test_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_gaussian(&a, 200, 10, 0.0, 1);
    write_gaussian(&b, 200, 10, 1.0, 2);
    let out = dir.path().join("out");

    let (code, err) = run(&[
        "shift-test",
        p(&a),
        p(&a),
        "--out-dir",
        p(&out),
        "--draws",
        "20",
    ]);
    assert_eq!(code, 0, "{err}");
    let res = read_json(&out.join("btest.json"));
    assert!(res["btest"]["p_value"].as_f64().unwrap() > res["btest"]["alpha"].as_f64().unwrap());

    let (code, err) = run(&[
        "shift-test",
        p(&a),
        p(&b),
        "--out-dir",
        p(&out),
        "--draws",
        "20",
    ]);
    assert_eq!(code, 2, "{err}");
    assert_eq!(read_json(&out.join("btest.json"))["btest"]["reject"], true);
    assert_eq!(data_lines(&out.join("distributions.csv")).len(), 41);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "c0,c1\n1,2\n3\n").unwrap();
    let (code, err) = run(&["shift-test", p(&a), p(&bad), "--out-dir", p(&out)]);
    assert_eq!(code, 1);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn embed_defaults_and_ood() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_gaussian(&a, 300, 5, 0.0, 4);
    write_gaussian(&b, 300, 5, 0.5, 5);
    let out = dir.path().join("out");

    let (code, err) = run(&[
        "embed",
        p(&a),
        p(&b),
        "--out-dir",
        p(&out),
        "--ood-rect",
        "-4",
        "-1",
        "-4",
        "-2",
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(data_lines(&out.join("density.csv")).len(), 1 + 50 * 50);
    let ood = read_json(&out.join("ood.json"));
    let crit = &ood["ood"]["selection"]["criterion"];
    assert_eq!(crit["kind"], "rectangle");
    assert_eq!(
        (crit["x0"].as_f64(), crit["x1"].as_f64()),
        (Some(-4.0), Some(-1.0))
    );
    assert_eq!(
        (crit["y0"].as_f64(), crit["y1"].as_f64()),
        (Some(-4.0), Some(-2.0))
    );
    let model = read_json(&out.join("model.json"));
    assert_eq!(model["model"]["score_scaling"], "unit");

    let (code, err) = run(&[
        "ood",
        p(&a),
        p(&a),
        "--out-dir",
        p(&out),
        "--ood-nonoverlap",
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(read_json(&out.join("ood.json"))["ood"]["count"], 0);
    assert_eq!(data_lines(&out.join("ood_indices.csv")), vec!["index"]);
    assert!(err.contains("out-of-distribution"), "{err}");
}

#[test]
fn eval_fixture_and_abstention() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("cohort.csv");
    let rows = [
        ("a", 0.95, 1),
        ("b", 0.80, 1),
        ("c", 0.70, 1),
        ("d", 0.55, 1),
        ("e", 0.40, 1),
        ("f", 0.20, 1),
        ("g", 0.90, 0),
        ("h", 0.60, 0),
        ("i", 0.45, 0),
        ("j", 0.30, 0),
        ("k", 0.10, 0),
        ("l", 0.05, 0),
    ];
    let mut text = String::from("id,score,label\n");
    for (id, s, l) in rows {
        text.push_str(&format!("{id},{s},{l}\n"));
    }
    fs::write(&preds, text).unwrap();
    let out = dir.path().join("out");

    let (code, err) = run(&["eval", p(&preds), "--out-dir", p(&out), "--keep", "0.5"]);
    assert_eq!(code, 0, "{err}");
    let doc = read_json(&out.join("metrics.json"));
    let full = &doc["metrics"]["cohorts"]["cohort"];
    assert_eq!(full["confusion"]["tp"], 4);
    assert_eq!(full["confusion"]["fp"], 2);
    assert_eq!(full["confusion"]["tn"], 4);
    assert_eq!(full["confusion"]["fn"], 2);
    assert_eq!(full["accuracy"].as_f64(), Some(8.0 / 12.0));
    assert_eq!(full["auc"].as_f64(), Some(25.0 / 36.0));
    for key in ["precision", "sensitivity", "specificity", "ppv", "npv"] {
        assert_eq!(full[key].as_f64(), Some(4.0 / 6.0), "{key}");
    }
    let kept = &doc["metrics"]["cohorts"]["cohort_keep0.5"];
    assert_eq!(kept["abstention_fraction"].as_f64(), Some(0.5));
    assert_eq!(kept["n"], 6);

    let unlabeled = dir.path().join("scores.csv");
    fs::write(&unlabeled, "id,score\na,0.5\n").unwrap();
    let (code, _) = run(&["eval", p(&unlabeled), "--out-dir", p(&out)]);
    assert_eq!(code, 1);
}

#[test]
fn adapt_report_writes_both_rows() {
    let dir = tempfile::tempdir().unwrap();
    let [s, a, t] = ["s.csv", "a.csv", "t.csv"].map(|n| dir.path().join(n));
    write_gaussian(&s, 120, 4, 1.5, 7);
    write_gaussian(&a, 120, 4, 0.1, 8);
    write_gaussian(&t, 120, 4, 0.0, 9);
    let out = dir.path().join("out");
    let (code, err) = run(&["adapt-report", p(&s), p(&a), p(&t), "--out-dir", p(&out)]);
    assert_eq!(code, 0, "{err}");
    let lines = data_lines(&out.join("adaptation.csv"));
    let first: Vec<&str> = lines
        .iter()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(first, ["source_vs_target", "adapted_vs_target", "delta"]);
}
