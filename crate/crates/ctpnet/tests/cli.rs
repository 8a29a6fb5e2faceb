use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: [&str; 8] = ["--set", "width=48", "--set", "height=48", "--set", "model=tiny", "--input-size", "32"];

fn ctpnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctpnet")).args(args).env("CTPN_THREADS", "1").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ctpnet(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let out = ctpnet(args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn generate(dir: &Path, count: usize, seed: u64) {
    let (c, s, d) = (count.to_string(), seed.to_string(), dir.to_str().unwrap().to_owned());
    let mut args = vec!["generate", "--count", &c, "--seed", &s, "--out", &d];
    args.extend(SMALL);
    ok(&args);
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_exits_zero_everywhere() {
    for sub in ["generate", "train", "eval", "sweep", "gradcheck", "predict"] {
        let out = ctpnet(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
    assert_eq!(ctpnet(&["--help"]).status.code(), Some(0));
}

#[test]
fn generate_writes_one_manifest_line_per_sample() {
    let tmp = TempDir::new().unwrap();
    generate(tmp.path(), 10, 1);
    let manifest = fs::read_to_string(tmp.path().join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 10);
    for id in 0..10 {
        assert!(tmp.path().join(format!("images/{id:06}.png")).exists());
        assert!(tmp.path().join(format!("masks/{id:06}.png")).exists());
    }
}

#[test]
fn generate_is_reproducible_under_seed() {
    let (a, b, c) = (TempDir::new().unwrap(), TempDir::new().unwrap(), TempDir::new().unwrap());
    generate(a.path(), 4, 9);
    generate(b.path(), 4, 9);
    generate(c.path(), 4, 10);
    let read = |d: &TempDir, f: &str| fs::read(d.path().join(f)).unwrap();
    for f in ["manifest.jsonl", "images/000002.png", "masks/000003.png"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
    assert_ne!(read(&a, "images/000000.png"), read(&c, "images/000000.png"));
}

#[test]
fn gradcheck_reports_all_checks_passed() {
    let stdout = ok(&["gradcheck", "--instances", "20", "--samples", "200"]);
    let last = stdout.lines().last().unwrap();
    assert!(last.starts_with("all ") && last.ends_with(" checks passed"), "{stdout}");
}

#[test]
fn error_classes_map_to_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let (c, err) = code(&["generate", "--count", "2", "--out", path(tmp.path()), "--set", "bogus=1"]);
    assert_eq!(c, 1);
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "));
    assert_eq!(code(&["generate", "--out", path(tmp.path())]).0, 1, "missing --count");
    assert_eq!(code(&["train", "--data", path(tmp.path()), "--out", path(tmp.path()), "--set", "learning_rate=-1"]).0, 1);

    let missing = tmp.path().join("nope");
    let (c, err) = code(&["eval", "--checkpoint", path(&missing), "--data", path(&missing)]);
    assert_eq!(c, 2);
    assert!(err.starts_with("error: "));

    let data = tmp.path().join("data");
    generate(&data, 10, 2);
    let mut args = vec!["train", "--data", path(&data), "--out", path(tmp.path()), "--set", "learning_rate=1e12"];
    args.extend(["--set", "epochs=3", "--set", "validate_every=3", "--set", "batch_size=4"]);
    args.extend(SMALL);
    let (c, err) = code(&args);
    assert_eq!(c, 3, "{err}");
}

#[test]
fn train_eval_sweep_predict_round_trip() {
    let tmp = TempDir::new().unwrap();
    let (data, run) = (tmp.path().join("data"), tmp.path().join("run"));
    generate(&data, 10, 3);

    let mut args = vec!["train", "--data", path(&data), "--out", path(&run), "--seed", "3"];
    args.extend(["--set", "epochs=2", "--set", "validate_every=1", "--set", "batch_size=4", "--set", "learning_rate=0.05"]);
    args.extend(SMALL);
    let table = ok(&args);
    assert!(table.contains("checkpoint:"));
    for f in ["best.ckpt", "last.ckpt", "history.jsonl", "test_report.jsonl"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let history = fs::read_to_string(run.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 4, "two epochs and two validations");
    let ckpt = run.join("best.ckpt");

    let report_dir = tmp.path().join("eval");
    let eval = ["eval", "--checkpoint", path(&ckpt), "--data", path(&data), "--out", path(&report_dir), "--pooled-auc"];
    let first = ok(&eval);
    assert_eq!(first, ok(&eval), "eval is deterministic");
    let report = fs::read_to_string(report_dir.join("report.jsonl")).unwrap();
    let samples = report.lines().filter(|l| l.contains("\"record\":\"sample\"")).count();
    assert_eq!(samples, 10);
    let test_only = ok(&["eval", "--checkpoint", path(&ckpt), "--data", path(&data), "--split", "test", "--seed", "3"]);
    assert_ne!(test_only, first);

    let sweep_dir = tmp.path().join("sweep");
    let grid = "resize:1,0.5;gauss_noise:0,25";
    ok(&["sweep", "--checkpoint", path(&ckpt), "--data", path(&data), "--grid", grid, "--out", path(&sweep_dir)]);
    let rows = fs::read_to_string(sweep_dir.join("sweep.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 4);
    let first_row: serde_json::Value = serde_json::from_str(rows.lines().next().unwrap()).unwrap();
    assert_eq!(first_row["kind"], "resize");
    for key in ["factor", "auc", "f1", "iou", "mcc", "n_samples"] {
        assert!(first_row.get(key).is_some(), "{key}");
    }

    let pred_dir = tmp.path().join("pred");
    let image = data.join("images/000004.png");
    ok(&["predict", "--checkpoint", path(&ckpt), "--image", path(&image), "--out", path(&pred_dir)]);
    let mask = image::open(pred_dir.join("mask.png")).unwrap().to_luma8();
    assert_eq!(mask.dimensions(), (48, 48));
    assert!(mask.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
    let overlay = image::open(pred_dir.join("overlay.png")).unwrap().to_rgb8();
    let original = image::open(&image).unwrap().to_rgb8();
    for ((m, o), src) in mask.pixels().zip(overlay.pixels()).zip(original.pixels()) {
        if m.0[0] == 255 {
            assert_eq!(o.0, [255, 0, 0]);
        } else {
            assert_eq!(o, src);
        }
    }
    assert_eq!(image::open(pred_dir.join("prob.png")).unwrap().to_luma8().dimensions(), (48, 48));

    // continue training from the saved weights
    let resumed = tmp.path().join("resumed");
    let mut args = vec!["train", "--data", path(&data), "--out", path(&resumed), "--from-checkpoint", path(&ckpt)];
    args.extend(["--set", "epochs=1", "--set", "validate_every=1", "--set", "batch_size=4", "--set", "learning_rate=0.05"]);
    args.extend(["--set", "width=48", "--set", "height=48"]);
    ok(&args);
    assert!(resumed.join("last.ckpt").exists());
}
