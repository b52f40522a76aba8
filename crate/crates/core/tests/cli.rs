//! End-to-end checks of the `rap` executable.

use std::path::Path;
use std::process::{Command, Output};

use rap::codec::{read_video, write_video, VideoClip};
use rap::numerics::Tensor;
use rap::persist::{self, KvConfig};
use rap::toy::ToyCorpus;
use rap::train::{RunConfig, TrainState};

fn rap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rap")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = rap(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(dir: &Path, steps: u64) -> std::path::PathBuf {
    let mut kv = RunConfig::default().to_kv();
    kv.set("steps", steps);
    kv.set("seed", 5);
    kv.set("batch", 2);
    kv.set("stats_samples", 4);
    let p = dir.join(format!("s{steps}.cfg"));
    std::fs::write(&p, format!("# test run\n{}", kv.to_text())).unwrap();
    p
}

#[test]
fn synth_data_is_idempotent() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    ok(&["synth-data", "--out", s(&a), "--count", "1", "--seed", "4"]);
    ok(&["synth-data", "--out", s(&b), "--count", "1", "--seed", "4"]);
    let m = std::fs::read_to_string(a.join("manifest.csv")).unwrap();
    assert_eq!(m.lines().count(), 2);
    assert_eq!(m, std::fs::read_to_string(b.join("manifest.csv")).unwrap());
    assert_eq!(std::fs::read(a.join("sample_00000.rapv")).unwrap(), std::fs::read(b.join("sample_00000.rapv")).unwrap());
}

#[test]
fn zero_steps_saves_the_initial_model() {
    let d = tempfile::tempdir().unwrap();
    let ckpt = d.path().join("m.rapc");
    ok(&["train", "--config", s(&tiny_config(d.path(), 0)), "--data", "toy:16", "--out", s(&ckpt)]);
    let mut cfg = RunConfig::default();
    cfg.train.steps = 0;
    cfg.train.seed = 5;
    cfg.train.batch = 2;
    cfg.train.stats_samples = 4;
    let init = TrainState::init(cfg, &ToyCorpus::train(5, 16)).unwrap();
    assert_eq!(std::fs::read(&ckpt).unwrap(), init.to_checkpoint().to_bytes());
}

#[test]
fn config_errors_exit_with_usage_code() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.cfg");
    std::fs::write(&cfg, "steps = 3\n").unwrap();
    let out = rap(&["train", "--config", s(&cfg), "--data", "toy:4", "--out", s(&d.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`seed`"));
    std::fs::write(&cfg, "steps = 3\nseed 4\n").unwrap();
    let out = rap(&["train", "--config", s(&cfg), "--data", "toy:4", "--out", s(&d.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert_eq!(rap(&["generate"]).status.code(), Some(2));
}

#[test]
fn generate_trims_only_after_the_first_clip() {
    let d = tempfile::tempdir().unwrap();
    let ckpt = d.path().join("m.rapc");
    ok(&["train", "--config", s(&tiny_config(d.path(), 1)), "--data", "toy:8", "--out", s(&ckpt)]);
    let data = d.path().join("data");
    ok(&["synth-data", "--out", s(&data), "--count", "1", "--frames", "45"]);
    let (v, w) = (data.join("sample_00000.rapv"), data.join("sample_00000.wav"));
    let one = d.path().join("one.rapv");
    ok(&["generate", "--ckpt", s(&ckpt), "--ref", s(&v), "--audio", s(&w), "--clips", "1", "--steps", "2", "--out", s(&one)]);
    assert_eq!(read_video(&one).unwrap().num_frames(), 21);
    assert!(d.path().join("one.timing.csv").exists());
    let three = d.path().join("three.rapv");
    ok(&["generate", "--ckpt", s(&ckpt), "--ref", s(&v), "--audio", s(&w), "--clips", "3", "--steps", "2", "--out", s(&three)]);
    assert_eq!(read_video(&three).unwrap().num_frames(), 21 + 2 * 12);
    let out = rap(&["generate", "--ckpt", s(&ckpt), "--ref", s(&v), "--audio", s(&w), "--clips", "4", "--steps", "2", "--out", s(&three)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("need 2.280 s"));

    let report = ok(&["bench", "--ckpt", s(&ckpt), "--steps", "2", "--runs", "3"]);
    assert!(report.starts_with("latents_per_s,frames_per_s,ms_per_step"));
}

#[test]
fn metrics_on_static_and_ground_truth_video() {
    let d = tempfile::tempdir().unwrap();
    let still = d.path().join("still.rapv");
    write_video(&still, &VideoClip::new(Tensor::full(&[3, 9, 8, 8], 0.4), 25.0).unwrap()).unwrap();
    let out = d.path().join("m.csv");
    ok(&["metrics", "--video", s(&still), "--out", s(&out)]);
    assert!(std::fs::read_to_string(&out).unwrap().contains("heatmap_sum,0.000000"));

    let data = d.path().join("data");
    ok(&["synth-data", "--out", s(&data), "--count", "1", "--seed", "2"]);
    let p = |f: &str| data.join(f);
    let text = ok(&[
        "metrics", "--video", s(&p("sample_00000.rapv")), "--audio", s(&p("sample_00000.wav")), "--mask",
        s(&p("sample_00000.rapm")), "--out", s(&out), "--heatmap", s(&d.path().join("h.pgm")),
    ]);
    let sync: f64 = text.lines().find_map(|l| l.strip_prefix("sync,")).unwrap().parse().unwrap();
    assert!(sync >= 0.95, "{sync}");
    let missing = rap(&["metrics", "--video", s(&still), "--audio", s(&p("sample_00000.wav")), "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn ablate_rejects_empty_grid_and_reports_rows() {
    let d = tempfile::tempdir().unwrap();
    let report = d.path().join("r.csv");
    let out = rap(&["ablate", "--ckpt-dir", s(d.path()), "--grid", "", "--report", s(&report)]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = tiny_config(d.path(), 1);
    ok(&[
        "ablate", "--ckpt-dir", s(d.path()), "--grid", "0,0;0,1", "--config", s(&cfg), "--data", "toy:8",
        "--eval-count", "1", "--drift-clips", "2", "--steps", "2", "--report", s(&report),
    ]);
    let text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("setting,w,delta,overlap,cfg_scale,sync,boundary_ratio,drift_max,fps"));
    let ckpt = d.path().join("model_w0_d1.rapc");
    assert!(ckpt.exists());
    let kv: &KvConfig = &persist::load(&ckpt).unwrap().config;
    assert_eq!(kv.raw("delta"), Some("1"));
    ok(&[
        "ablate", "--ckpt-dir", s(d.path()), "--overlap", "1,2", "--ckpt", s(&ckpt), "--eval-count", "1",
        "--drift-clips", "2", "--steps", "2", "--report", s(&report),
    ]);
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 3);
}
