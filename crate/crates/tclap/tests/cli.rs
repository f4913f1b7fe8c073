use std::path::Path;
use std::process::{Command, Output};

/// Small corpus and model so each command runs in well under a second.
const SMOKE_TOML: &str = r#"
seed = 3

[corpus]
n_classes = 6
frame_dim = 8
frames_per_event = 2
n_train_primary = 60
n_train_temporal = 60
n_test = 20
n_test_single = 12

[train]
steps = 30
batch_size = 10
warmup_steps = 5
checkpoint_every = 10

[model]
token_embed_dim = 8
hidden_dim = 12
shared_dim = 8
max_positions = 16
"#;

fn tclap(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tclap"))
        .args(args)
        .current_dir(cwd)
        .env_remove("TCLAP_OUT_ROOT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn smoke_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("smoke.toml"), SMOKE_TOML).unwrap();
    dir
}

#[test]
fn full_workflow_through_the_binary() {
    let dir = smoke_dir();
    let d = dir.path();
    let cfg = ["--config", "smoke.toml"];

    let o = tclap(&[&cfg[..], &["--out", "data", "synth"]].concat(), d);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let out = text(&o.stdout);
    assert!(out.contains("train_primary.jsonl: 60 records"), "{out}");
    assert!(out.contains("test_single.jsonl: 12 records"), "{out}");

    let o = tclap(&[&cfg[..], &["--out", "run", "train", "--data", "data"]].concat(), d);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let out = text(&o.stdout);
    assert!(out.contains("step 30:") && out.contains("l_train"), "{out}");
    assert!(d.join("run/checkpoint.tckp").exists());
    assert!(d.join("run/checkpoints/step-0000000030.tckp").exists());

    let o = tclap(
        &[&cfg[..], &["--out", "ev", "eval", "--data", "data", "--checkpoint", "run/checkpoint.tckp"]].concat(),
        d,
    );
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let report = std::fs::read_to_string(d.join("ev/report.json")).unwrap();
    assert!(report.contains("\"retrieval\"") && report.contains("\"zero_shot\""));
    assert!(report.contains("\"t_classify\": null"));

    let o = tclap(
        &[&cfg[..], &["--out", "tc", "tclassify", "--data", "data", "--checkpoint", "run/checkpoint.tckp"]].concat(),
        d,
    );
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let report = std::fs::read_to_string(d.join("tc/report.json")).unwrap();
    assert!(report.contains("\"t2a_accuracy\"") && report.contains("\"a2t_accuracy\""));
    assert!(report.contains("\"retrieval\": null"));

    // Same command twice gives the same artifact.
    let o = tclap(
        &[&cfg[..], &["--out", "tc2", "tclassify", "--data", "data", "--checkpoint", "run/checkpoint.tckp"]].concat(),
        d,
    );
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(d.join("tc2/report.json")).unwrap(), report.into_bytes());
}

#[test]
fn flags_override_the_config_file() {
    let dir = smoke_dir();
    let d = dir.path();
    let o = tclap(&["--config", "smoke.toml", "--out", "data", "synth"], d);
    assert_eq!(code(&o), 0);
    let o = tclap(
        &["--config", "smoke.toml", "--steps", "7", "--out", "run", "train", "--data", "data"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("step 7:"), "{}", text(&o.stdout));
}

#[test]
fn default_output_root_follows_the_environment() {
    let dir = smoke_dir();
    let o = Command::new(env!("CARGO_BIN_EXE_tclap"))
        .args(["--config", "smoke.toml", "synth"])
        .current_dir(dir.path())
        .env("TCLAP_OUT_ROOT", "elsewhere")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert!(dir.path().join("elsewhere/synth/train_primary.jsonl").exists());
}

#[test]
fn gradcheck_on_the_default_config_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = tclap(&["gradcheck"], dir.path());
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("max relative error"));
}

#[test]
fn unknown_config_key_exits_one_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[train]\nlearning_rate = 0.1\n").unwrap();
    let o = tclap(&["--config", "bad.toml", "gradcheck"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("learning_rate"), "{}", text(&o.stderr));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&tclap(&["--bogus", "synth"], dir.path())), 1);
    assert_eq!(code(&tclap(&[], dir.path())), 1);
    assert_eq!(code(&tclap(&["--lambda", "-1", "gradcheck"], dir.path())), 1);
    assert_eq!(code(&tclap(&["eval", "--data", "x"], dir.path())), 1);
}

#[test]
fn missing_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = tclap(&["train", "--data", "nowhere"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(text(&o.stderr).contains("nowhere"));
    std::fs::write(dir.path().join("junk.tckp"), b"not a checkpoint").unwrap();
    let o = tclap(&["--config", "x", "eval", "--data", ".", "--checkpoint", "junk.tckp"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn numeric_divergence_exits_three() {
    let dir = smoke_dir();
    let d = dir.path();
    assert_eq!(code(&tclap(&["--config", "smoke.toml", "--out", "data", "synth"], d)), 0);
    let o = tclap(
        &[
            "--config",
            "smoke.toml",
            "--base-lr",
            "1e305",
            "--warmup-steps",
            "0",
            "--out",
            "run",
            "train",
            "--data",
            "data",
        ],
        d,
    );
    assert_eq!(code(&o), 3, "{}", text(&o.stderr));
}

#[test]
fn help_documents_every_subcommand_and_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = tclap(&["--help"], dir.path());
    assert_eq!(code(&o), 0);
    let top = text(&o.stdout);
    for sub in ["synth", "train", "eval", "tclassify", "gradcheck", "repro"] {
        assert!(top.contains(sub), "{sub} missing from help");
        let o = tclap(&[sub, "--help"], dir.path());
        assert_eq!(code(&o), 0);
        let h = text(&o.stdout);
        for flag in ["--config", "--seed", "--out", "--steps", "--lambda"] {
            assert!(h.contains(flag), "{sub} --help lacks {flag}");
        }
    }
    let h = text(&tclap(&["eval", "--help"], dir.path()).stdout);
    assert!(h.contains("--checkpoint") && h.contains("--data"));
    let h = text(&tclap(&["train", "--help"], dir.path()).stdout);
    assert!(h.contains("--resume"));
}
