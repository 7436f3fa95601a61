//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const TINY_CONFIG: &str = r#"
[sim]
n_points = 96

[encoder]
point_widths = [3, 8, 16]
head_widths = [16, 16]
decoder_hidden = [16]
decoder_points = 32
cloud_points = 32

[corpus]
size = 8
heldout = 4
points = 64

[pretrain]
epochs = 1
batch_size = 4

[policy]
embedding_dim = 16
hidden_widths = [32]
diffusion_steps = 10
time_embedding_dim = 8

[train]
epochs = 1
batch_size = 32
max_steps = 3

[rollout]
max_actions = 6
"#;

pub fn pinchbot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pinchbot"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> String {
    let out = pinchbot(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

pub fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    if dir.is_file() {
        return vec![dir.to_path_buf()];
    }
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

pub fn assert_same_tree(a: &Path, b: &Path) {
    let fa = files(a);
    let fb = files(b);
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(a).ok(), y.strip_prefix(b).ok());
        assert!(fs::read(x).unwrap() == fs::read(y).unwrap(), "{} differs from {}", x.display(), y.display());
    }
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub const PIPELINE_OUTPUTS: [&str; 6] = ["demos", "aug", "mat", "enc.ckpt", "pol.ckpt", "roll"];

/// Runs every subcommand once under `root/tag` with config file `cfg`; returns
/// the output directory and each command's standard output.
///
/// The augmentation record stores its source path, so both `augment` calls
/// read the demos of run `a`.
pub fn cli_pipeline(root: &Path, cfg: &Path, tag: &str) -> (PathBuf, Vec<String>) {
    let c = s(cfg);
    let d = root.join(tag);
    fs::create_dir_all(&d).unwrap();
    let src = root.join("a/demos");
    let mut stdout = Vec::new();
    stdout.push(ok(&["gen-demos", "--config", c, "--n", "3", "--seed", "7", "--out", s(&d.join("demos"))]));
    stdout.push(ok(&["augment", "--config", c, "--in", s(&src), "--out", s(&d.join("aug")), "--step-deg", "120"]));
    stdout.push(ok(&["augment", "--config", c, "--in", s(&src), "--out", s(&d.join("mat")), "--step-deg", "120", "--materialize"]));
    stdout.push(ok(&["pretrain", "--config", c, "--seed", "3", "--out", s(&d.join("enc.ckpt"))]));
    stdout.push(ok(&[
        "train", "--config", c, "--data", s(&d.join("aug")), "--encoder", s(&d.join("enc.ckpt")), "--seed", "1", "--out",
        s(&d.join("pol.ckpt")),
    ]));
    stdout.push(ok(&[
        "rollout", "--config", c, "--policy", s(&d.join("pol.ckpt")), "--goal-diameter", "0.1", "--project-collisions", "--seed", "7",
        "--out", s(&d.join("roll")),
    ]));
    stdout.push(ok(&["eval", "--config", c, "--pred", s(&d.join("roll")), "--goal-diameter", "0.1"]));
    (d, stdout)
}
