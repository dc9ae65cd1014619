use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stytr_core::model::{ModelParams, TransformerConfig};
use stytr_core::patching::{decode_pgm, read_ppm, write_ppm};
use stytr_core::samples::{content_image, style_image, CONTENT_PPM, STYLE_PPM};
use stytr_core::weights::save_weights;
use tempfile::TempDir;

fn stytr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stytr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn toy_weights(dir: &Path) -> PathBuf {
    let path = dir.join("toy.styw");
    let cfg = TransformerConfig::toy();
    save_weights(&path, &ModelParams::<f32>::init(&cfg, 7), &cfg).unwrap();
    path
}

fn write_pair(dir: &Path, h: usize, w: usize) -> (PathBuf, PathBuf) {
    let (c, st) = (dir.join(format!("c{h}x{w}.ppm")), dir.join(format!("s{h}x{w}.ppm")));
    write_ppm(&content_image(h, w).quantized(), &c).unwrap();
    write_ppm(&style_image(h, w).quantized(), &st).unwrap();
    (c, st)
}

fn train_dirs(dir: &Path) -> (PathBuf, PathBuf) {
    let (c, st) = (dir.join("content"), dir.join("style"));
    std::fs::create_dir_all(&c).unwrap();
    std::fs::create_dir_all(&st).unwrap();
    std::fs::write(c.join("a.ppm"), CONTENT_PPM).unwrap();
    std::fs::write(st.join("a.ppm"), STYLE_PPM).unwrap();
    (c, st)
}

fn totals(csv: &Path) -> Vec<f64> {
    let text = std::fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "total").expect("total column");
    lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect()
}

#[test]
fn train_writes_checkpoint_and_reproducible_trace() {
    let dir = TempDir::new().unwrap();
    let (c, st) = train_dirs(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(format!("{name}.styw"));
        let o = stytr(&[
            "train", "--content", s(&c), "--style", s(&st), "--out", s(&out),
            "--iters", "200", "--batch-size", "1", "--log-every", "0",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let first = run("a");
    assert!(first.exists());
    let trace = totals(&first.with_extension("csv"));
    assert_eq!(trace.len(), 200);
    assert!(trace.last().unwrap() < trace.first().unwrap());
    let second = run("b");
    assert_eq!(
        std::fs::read(first.with_extension("csv")).unwrap(),
        std::fs::read(second.with_extension("csv")).unwrap()
    );
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
}

#[test]
fn train_writes_intermediate_checkpoints() {
    let dir = TempDir::new().unwrap();
    let (c, st) = train_dirs(dir.path());
    let out = dir.path().join("m.styw");
    let o = stytr(&[
        "train", "--content", s(&c), "--style", s(&st), "--out", s(&out),
        "--iters", "4", "--batch-size", "1", "--ckpt-every", "2", "--log-every", "0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("m_step000002.styw").exists());
    assert!(!dir.path().join("m_step000004.styw").exists());
    assert!(out.exists());
}

#[test]
fn missing_style_dir_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let (c, _) = train_dirs(dir.path());
    let missing = dir.path().join("nowhere");
    let o = stytr(&[
        "train", "--content", s(&c), "--style", s(&missing), "--out", s(&dir.path().join("m.styw")),
        "--iters", "1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere"), "{}", stderr(&o));
}

#[test]
fn bad_config_key_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let (c, st) = train_dirs(dir.path());
    let o = stytr(&[
        "train", "--content", s(&c), "--style", s(&st), "--out", s(&dir.path().join("m.styw")),
        "--set", "no_such_key=1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_key"), "{}", stderr(&o));
}

#[test]
fn stylize_keeps_content_size_with_one_weight_file() {
    let dir = TempDir::new().unwrap();
    let w = toy_weights(dir.path());
    for (h, wd, pe) in [(32, 32, "cape"), (64, 64, "cape"), (48, 40, "sinusoidal")] {
        let (c, st) = write_pair(dir.path(), h, wd);
        let out = dir.path().join(format!("out_{h}x{wd}.ppm"));
        let o = stytr(&[
            "stylize", "--weights", s(&w), "--content", s(&c), "--style", s(&st), "--out", s(&out), "--pe", pe,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let img = read_ppm(&out).unwrap();
        assert_eq!((img.height(), img.width()), (h, wd));
    }
}

#[test]
fn stylize_png_output() {
    let dir = TempDir::new().unwrap();
    let w = toy_weights(dir.path());
    let (c, st) = write_pair(dir.path(), 32, 32);
    let out = dir.path().join("out.png");
    let o = stytr(&["stylize", "--weights", s(&w), "--content", s(&c), "--style", s(&st), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(&std::fs::read(&out).unwrap()[1..4], b"PNG");
}

#[test]
fn stylize_with_corrupt_weights_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let w = toy_weights(dir.path());
    let mut bytes = std::fs::read(&w).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    std::fs::write(&w, bytes).unwrap();
    let (c, st) = write_pair(dir.path(), 32, 32);
    let o = stytr(&[
        "stylize", "--weights", s(&w), "--content", s(&c), "--style", s(&st), "--out", s(&dir.path().join("o.ppm")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));
}

#[test]
fn rounds_chain_from_stylize() {
    let dir = TempDir::new().unwrap();
    let w = toy_weights(dir.path());
    let (c, st) = write_pair(dir.path(), 32, 32);
    let rounds_dir = dir.path().join("rounds");
    let o = stytr(&[
        "rounds", "--weights", s(&w), "--content", s(&c), "--style", s(&st), "--n", "3", "--out", s(&rounds_dir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut prev = c.clone();
    for i in 1..=3 {
        let out = dir.path().join(format!("manual_{i}.ppm"));
        let o = stytr(&[
            "stylize", "--weights", s(&w), "--content", s(&prev), "--style", s(&st), "--out", s(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let round = rounds_dir.join(format!("round_{i:02}.ppm"));
        assert_eq!(std::fs::read(&round).unwrap(), std::fs::read(&out).unwrap(), "round {i}");
        prev = out;
    }
}

#[test]
fn pe_compare_writes_heatmaps() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("pe");
    let o = stytr(&["pe-compare", "--grid", "6x5", "--out", s(&out), "--dim", "64", "--cape-grid", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for (name, h, w) in [
        ("sinusoidal_dot.pgm", 30, 30),
        ("closed_form_dot.pgm", 30, 30),
        ("cape_dot.pgm", 30, 30),
        ("sinusoidal_norm.pgm", 6, 5),
        ("cape_norm.pgm", 6, 5),
    ] {
        let g = decode_pgm(&std::fs::read(out.join(name)).unwrap()).unwrap();
        assert_eq!((g.height, g.width), (h, w), "{name}");
    }
    assert_eq!(stytr(&["pe-compare", "--grid", "6by5", "--out", s(&out)]).status.code(), Some(2));
}

#[test]
fn check_passes_and_flags_corrupt_weights() {
    let o = stytr(&["check"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("all suites passed"), "{stdout}");

    let dir = TempDir::new().unwrap();
    let w = toy_weights(dir.path());
    let mut bytes = std::fs::read(&w).unwrap();
    bytes[20] ^= 0xff;
    std::fs::write(&w, bytes).unwrap();
    let o = stytr(&["check", "--weights", s(&w)]);
    assert_eq!(o.status.code(), Some(1));
}
