use std::path::Path;
use std::process::{Command, Output};

fn lfa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lfa")).args(args).output().expect("spawn lfa")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthetic dataset plus a two-epoch checkpoint at 64×64.
fn trained(dir: &Path) -> (String, String) {
    let data = dir.join("data");
    assert!(lfa(&["synth", "--out", p(&data), "--count", "3", "--size", "64"]).status.success());
    let manifest = data.join("manifest.tsv");
    let ckpt = dir.join("m.ckpt");
    let o = lfa(&[
        "train", "--manifest", p(&manifest), "--epochs", "2", "--input-size", "64", "--split", "1.0",
        "--out", p(&ckpt),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    (p(&manifest).to_string(), p(&ckpt).to_string())
}

#[test]
fn missing_required_argument_is_usage_error() {
    assert_eq!(lfa(&["train"]).status.code(), Some(2));
    assert_eq!(lfa(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn unknown_ablation_row_is_usage_error() {
    let o = lfa(&["inspect", "--ablation", "no-such-row"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("LU-NS"));
}

#[test]
fn missing_manifest_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = lfa(&["train", "--manifest", p(&dir.path().join("absent.tsv"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn inspect_reports_default_budget() {
    let out = stdout(&lfa(&["inspect"]));
    assert!(out.contains("109527"), "{out}");
    assert!(out.contains("438108 bytes"), "{out}");
    let csv = stdout(&lfa(&["inspect", "--csv", "--input-size", "64"]));
    assert!(csv.starts_with("name,kind,n,c,h,w,params,flops\n"));
    assert!(csv.lines().count() > 20);
}

#[test]
fn ablation_list_names_every_row() {
    let out = stdout(&lfa(&["ablation-list"]));
    for row in ["LU-NS", "MLU-NS", "MLU+R-Skip", "MLU+R12-Skip+LF+R-Bottleneck"] {
        assert!(out.contains(row), "{row} missing from\n{out}");
    }
}

#[test]
fn gradcheck_single_op_and_forced_failure() {
    let ok = lfa(&["gradcheck", "--op", "sigmoid"]);
    assert!(ok.status.success());
    assert!(stdout(&ok).contains("PASS sigmoid"));
    let bad = lfa(&["gradcheck", "--op", "gelu", "--tolerance", "1e-15"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("gelu"));
}

#[test]
fn train_infer_eval_round() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, ckpt) = trained(dir.path());

    let preds = dir.path().join("preds");
    let o = lfa(&["infer", "--checkpoint", &ckpt, "--input", p(&dir.path().join("data/images")), "--output", p(&preds)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 3);
    assert_eq!(std::fs::read_dir(&preds).unwrap().count(), 3);

    let from_ckpt = stdout(&lfa(&["eval", "--manifest", &manifest, "--checkpoint", &ckpt]));
    let from_preds = stdout(&lfa(&["eval", "--manifest", &manifest, "--predictions", p(&preds)]));
    // identical confusion counts whether scored in memory or from written masks
    let counts = |s: &str| s.lines().find(|l| l.starts_with("pixels")).unwrap().to_string();
    assert_eq!(counts(&from_ckpt), counts(&from_preds));
    assert!(from_ckpt.contains("mean loss"));
}

#[test]
fn resume_continues_and_periodic_checkpoints_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, ckpt) = trained(dir.path());
    let next = dir.path().join("next.ckpt");
    let o = lfa(&[
        "train", "--manifest", &manifest, "--epochs", "2", "--input-size", "64", "--split", "1.0",
        "--resume", &ckpt, "--checkpoint-every", "1", "--out", p(&next),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(next.exists());
    assert!(dir.path().join("next.epoch1.ckpt").exists());
}

#[test]
fn infer_rejects_extent_not_multiple_of_eight_without_resize() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt) = trained(dir.path());
    let odd = dir.path().join("odd");
    assert!(lfa(&["synth", "--out", p(&odd), "--count", "1", "--size", "64"]).status.success());
    let img = image_of(&odd);
    let cropped = dir.path().join("cropped.png");
    crop_png(&img, &cropped, 60);
    let o = lfa(&["infer", "--checkpoint", &ckpt, "--input", p(&cropped), "--output", p(&dir.path().join("m.png"))]);
    assert_eq!(o.status.code(), Some(2));
    let out = dir.path().join("m.png");
    let o = lfa(&["infer", "--checkpoint", &ckpt, "--input", p(&cropped), "--output", p(&out), "--input-size", "64"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("60x60"));
}

fn image_of(dir: &Path) -> std::path::PathBuf {
    std::fs::read_dir(dir.join("images")).unwrap().next().unwrap().unwrap().path()
}

/// Keeps the top-left `size`×`size` corner.
fn crop_png(src: &Path, dst: &Path, size: usize) {
    let image = lfa_core::data_io::load_image(src).unwrap();
    let mut out = lfa_core::Tensor::zeros([1, 3, size, size]);
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                out.set(0, c, y, x, image.at(0, c, y, x));
            }
        }
    }
    lfa_core::data_io::write_image_png(&out, dst).unwrap();
}

#[test]
fn config_file_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, "[model]\nstage_widths = [6, 9, 12]\n").unwrap();
    let out = stdout(&lfa(&["inspect", "--config", p(&cfg), "--input-size", "64"]));
    assert!(!out.contains("109527"), "{out}");
    std::fs::write(&cfg, "[model]\nwidths = 3\n").unwrap();
    assert_eq!(lfa(&["inspect", "--config", p(&cfg)]).status.code(), Some(2));
}
