use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sarriver(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_sarriver")).args(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "sarriver {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_SCENE: &str = r#"{
    "scene": {"width": 96, "height": 96, "meander_amplitude": 8.0, "meander_period": 80.0, "fields": 10, "bright_points": 4},
    "png": false
}"#;

#[test]
fn stage_commands_match_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("cfg.json");
    fs::write(&cfg, SMALL_SCENE).unwrap();
    let (sim, run) = (d.join("sim"), d.join("run"));

    sarriver(&["simulate", "--config", p(&cfg), "--seed", "5", "--out", p(&sim)]);
    for f in ["noisy.sras", "truth.sras", "control_points.csv"] {
        assert!(sim.join(f).exists(), "{f}");
    }
    sarriver(&["detect-lines", "--config", p(&cfg), "--input", p(&sim.join("noisy.sras")), "--output", p(&d.join("resp.sras"))]);
    sarriver(&[
        "centerline",
        "--response",
        p(&d.join("resp.sras")),
        "--control-points",
        p(&sim.join("control_points.csv")),
        "--output",
        p(&d.join("line.csv")),
    ]);
    sarriver(&[
        "segment",
        "--config",
        p(&cfg),
        "--input",
        p(&sim.join("noisy.sras")),
        "--centerline",
        p(&d.join("line.csv")),
        "--output",
        p(&d.join("mask.sras")),
    ]);
    let eval = sarriver(&[
        "evaluate",
        "--mask",
        p(&d.join("mask.sras")),
        "--truth",
        p(&sim.join("truth.sras")),
        "--scene",
        "synthetic",
        "--method",
        "baseline",
        "--output",
        p(&d.join("metrics.csv")),
    ]);
    assert!(String::from_utf8_lossy(&eval.stdout).contains("fscore"));

    sarriver(&["pipeline", "--config", p(&cfg), "--seed", "5", "--out", p(&run)]);
    let read = |path: &Path| fs::read(path).unwrap();
    assert_eq!(read(&d.join("resp.sras")), read(&run.join("baseline/response.sras")));
    assert_eq!(read(&d.join("line.csv")), read(&run.join("baseline/centerline.csv")));
    assert_eq!(read(&d.join("mask.sras")), read(&run.join("baseline/mask.sras")));
    assert_eq!(read(&d.join("metrics.csv")), read(&run.join("metrics.csv")));
}

#[test]
fn train_then_run_proposed_method() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let plan = d.join("plan.json");
    fs::write(
        &plan,
        r#"{
            "architecture": {"channels": [4, 8, 8]},
            "training_images": 2,
            "image_size": 64,
            "stack_scene": {"width": 64, "height": 64, "meander_amplitude": 5.0, "fields": 6},
            "stack_dates": 3,
            "step_a": {"patches": 8, "epochs": 1, "patch_size": 32},
            "step_b": {"patches": 8, "epochs": 1, "patch_size": 32},
            "step_c": {"patches": 8, "epochs": 1, "patch_size": 32}
        }"#,
    )
    .unwrap();
    let models = d.join("models");
    let out = sarriver(&["train", "--desk-scale", "--config", p(&plan), "--seed", "3", "--out", p(&models)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("network C"));
    for f in ["model_a.rldn", "model_b.rldn", "model_c.rldn", "train_log_c.csv"] {
        assert!(models.join(f).exists(), "{f}");
    }

    let cfg = d.join("cfg.json");
    fs::write(&cfg, SMALL_SCENE).unwrap();
    let run = d.join("run");
    let out = sarriver(&[
        "pipeline",
        "--config",
        p(&cfg),
        "--model",
        p(&models.join("model_c.rldn")),
        "--set",
        "segmentation.lambda=3",
        "--out",
        p(&run),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("baseline") && stdout.contains("proposed"), "{stdout}");
    assert_eq!(fs::read_to_string(run.join("metrics.csv")).unwrap().lines().count(), 3);

    sarriver(&[
        "despeckle",
        "--model",
        p(&models.join("model_c.rldn")),
        "--input",
        p(&run.join("noisy.sras")),
        "--output",
        p(&d.join("den.sras")),
    ]);
    assert_eq!(fs::read(d.join("den.sras")).unwrap(), fs::read(run.join("proposed/despeckled.sras")).unwrap());
}

#[test]
fn errors_are_reported() {
    let out = Command::new(env!("CARGO_BIN_EXE_sarriver"))
        .args(["detect-lines", "--input", "/nonexistent.sras", "--output", "/tmp/x.sras"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = Command::new(env!("CARGO_BIN_EXE_sarriver"))
        .args(["pipeline", "--set", "segmentation.lambda=-1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));
}
