//! The command-line tool as a subprocess: exit codes and a small end-to-end run.

use std::path::Path;
use std::process::{Command, Output};

use raysplat::synth::SynthConfig;

fn raysplat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_raysplat"))
        .args(args)
        .output()
        .expect("spawn raysplat")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_synth(dir: &Path) -> std::path::PathBuf {
    let cfg = SynthConfig {
        width: 32,
        height: 32,
        focal: 32.0,
        ..SynthConfig::default()
    };
    let cfg_path = dir.join("synth.json");
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let scene = dir.join("scene");
    let o = raysplat(&["synth", "--out", s(&scene), "--config", s(&cfg_path)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = String::from_utf8(o.stdout).unwrap().trim().to_string();
    assert!(Path::new(&manifest).exists());
    manifest.into()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&raysplat(&[])), 1);
    assert_eq!(code(&raysplat(&["train", "--bogus"])), 1);
    assert_eq!(code(&raysplat(&["gradcheck", "--trials", "0"])), 1);
    assert_eq!(code(&raysplat(&["--help"])), 0);
}

#[test]
fn bad_input_data_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let ck = dir.path().join("ck.bin");
    assert_eq!(code(&raysplat(&["init", "--manifest", s(&missing), "--checkpoint", s(&ck)])), 2);

    std::fs::write(&ck, b"not a checkpoint").unwrap();
    let cam = dir.path().join("cam.json");
    let out = dir.path().join("r.png");
    assert_eq!(code(&raysplat(&["render", "--checkpoint", s(&ck), "--camera", s(&cam), "--out", s(&out)])), 2);

    let garbage = dir.path().join("manifest.json");
    std::fs::write(&garbage, b"{\"views\": 3}").unwrap();
    assert_eq!(code(&raysplat(&["init", "--manifest", s(&garbage), "--checkpoint", s(&ck)])), 2);
}

#[test]
fn synth_init_train_render_eval() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_synth(dir.path());
    let m = s(&manifest);
    let ck = dir.path().join("ck.bin");
    let o = raysplat(&["--threads", "1", "init", "--manifest", m, "--checkpoint", s(&ck), "--iters-scale", "100"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let trained = dir.path().join("trained.bin");
    let o = raysplat(&["train", "--manifest", m, "--checkpoint", s(&ck), "--out", s(&trained), "--max-steps", "6"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(trained.exists());

    let cam = manifest.parent().unwrap().join("heldout0_camera.json");
    let png = dir.path().join("novel.png");
    let o = raysplat(&["render", "--checkpoint", s(&trained), "--camera", s(&cam), "--out", s(&png)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(png.exists() && png.with_extension("pfm").exists());

    let out = dir.path().join("eval");
    std::fs::create_dir_all(&out).unwrap();
    let o = raysplat(&["eval", "--manifest", m, "--checkpoint", s(&trained), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["iterations_trained"], 6);
    assert!(report["mean_psnr"].as_f64().unwrap() > 10.0);
    assert_eq!(report["constants"]["beta_m"], 5.0);
    assert!(out.join("report.json").exists());
    assert!(out.join("heldout0_render.png").exists());

    // resuming picks up the saved iteration count
    let o = raysplat(&["train", "--manifest", m, "--checkpoint", s(&trained), "--max-steps", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = raysplat(&["eval", "--manifest", m, "--checkpoint", s(&trained), "--out", s(&out)]);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["iterations_trained"], 8);
}

#[test]
fn gradcheck_subcommand_reports_every_op() {
    let o = raysplat(&["gradcheck", "--trials", "3", "--seed", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8(o.stdout).unwrap();
    for op in ["conv2d", "render", "ssim", "flow_loss", "project_covariance"] {
        assert!(text.lines().any(|l| l.starts_with(op) && l.ends_with("ok")), "{op} missing:\n{text}");
    }
}
