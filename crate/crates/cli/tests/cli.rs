use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[model]
latent = 8
hidden = 8
hidden_layers = 1
m_enc = 1
m_gu = 1
pooling_ratios = [2]
noise_std = 0.001

[train]
steps = 20
valid_every = 10
log_every = 5
lr_start = 1e-3
lr_end = 1e-4

[gen]
count = 12
steps = 4
seed = 3
"#;

fn sgunet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgunet"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), TINY).unwrap();
    std::fs::write(d.join("deep.toml"), TINY.replace("m_gu = 1", "m_gu = 2")).unwrap();

    let text = ok(sgunet(d, &["gen", "-c", "run.toml", "--out", "data"]));
    assert!(text.contains("wrote 12 trajectories"), "{text}");
    assert!(d.join("data/manifest.json").exists());

    ok(sgunet(
        d,
        &[
            "pretrain",
            "-c",
            "run.toml",
            "--data",
            "data",
            "--out",
            "pt.sgck",
            "--last",
            "pt_last.sgck",
        ],
    ));
    let log = std::fs::read_to_string(d.join("pt.csv")).unwrap();
    assert!(log
        .lines()
        .any(|l| l == "step,train_loss,valid_rmse,wall_time"));
    assert_eq!(log.lines().filter(|l| !l.starts_with('#')).count(), 1 + 4);

    let text = ok(sgunet(
        d,
        &[
            "transplant",
            "-c",
            "deep.toml",
            "--source",
            "pt.sgck",
            "--out",
            "tp.sgck",
            "--strategy",
            "first-n",
        ],
    ));
    assert!(text.contains("fresh"), "{text}");
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("tp.report.json")).unwrap()).unwrap();
    assert_eq!(report["strategy"], "first-n");
    assert!(report["entries"]
        .as_array()
        .unwrap()
        .iter()
        .any(|e| e["kind"] == "copied"));

    ok(sgunet(
        d,
        &[
            "finetune",
            "-c",
            "deep.toml",
            "--data",
            "data",
            "--init",
            "tp.sgck",
            "--report",
            "tp.report.json",
            "--out",
            "ft.sgck",
            "--lambda",
            "0.1",
            "--fraction",
            "0.5",
            "--steps",
            "10",
        ],
    ));
    ok(sgunet(
        d,
        &[
            "finetune",
            "-c",
            "run.toml",
            "--data",
            "data",
            "--source",
            "pt.sgck",
            "--strategy",
            "uniform",
            "--out",
            "ft2.sgck",
            "--fraction",
            "0.125",
        ],
    ));

    let text = ok(sgunet(
        d,
        &[
            "rollout",
            "--checkpoint",
            "ft.sgck",
            "--trajectory",
            "data/traj_0000.sgt",
            "--out",
            "pred.sgt",
        ],
    ));
    assert!(text.contains("3 steps"), "{text}");
    assert!(d.join("pred.sgt").exists());

    let text = ok(sgunet(
        d,
        &[
            "eval",
            "--checkpoint",
            "ft2.sgck",
            "--data",
            "data",
            "--split",
            "train",
        ],
    ));
    let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
    assert_eq!(v["split"], "train");
    assert!(v["rmse"].as_f64().unwrap() >= 0.0);
}

#[test]
fn failures_exit_with_category_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = sgunet(
        d,
        &["eval", "--checkpoint", "missing.sgck", "--data", "nowhere"],
    );
    assert_eq!(out.status.code(), Some(7));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error [io]"));

    std::fs::write(d.join("bad.toml"), "[model]\nlatent_width = 3\n").unwrap();
    let out = sgunet(d, &["gen", "-c", "bad.toml", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error [config]"));

    std::fs::write(d.join("junk.sgck"), b"not a checkpoint").unwrap();
    let out = sgunet(
        d,
        &["transplant", "--source", "junk.sgck", "--out", "y.sgck"],
    );
    assert_eq!(out.status.code(), Some(6));

    let out = sgunet(
        d,
        &[
            "transplant",
            "--source",
            "a",
            "--out",
            "b",
            "--strategy",
            "sideways",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}
