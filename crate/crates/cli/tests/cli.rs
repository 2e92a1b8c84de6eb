use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fanet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fanet"))
        .args(args)
        .env_remove("FANET_CONFIG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#"
[backbone]
input_size = 128
stem_channels = 4
stage_channels = [8, 8, 8, 8, 8, 8]

[ablock]
context_channels = 8

[data]
image_size = 128
max_face = 64.0

[train]
batch_size = 4
schedule = [{ epochs = 1, lr = 0.001 }]
warmup_steps = 0
"#;

fn write_tiny(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    fs::write(&p, TINY).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn unknown_subcommand_and_flag_exit_2() {
    let o = fanet(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    let o = fanet(&["params", "--nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_config_exits_3_naming_key() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[ablock]\ncontext_channels = 6\n").unwrap();
    let o = fanet(&["params", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("ablock.context_channels"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);

    fs::write(&bad, "[hierarchy]\nlevels = 2\nspare = true\n").unwrap();
    let o = fanet(&["params", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("spare"));
}

#[test]
fn config_env_var_is_the_default_path() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[train]\nbatch_size = 0\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fanet"))
        .args(["params"])
        .env("FANET_CONFIG", &bad)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("train.batch_size"));
}

#[test]
fn help_lists_defaults() {
    let o = fanet(&["gen-data", "--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("--count") && text.contains("[default: 100]"), "{text}");
    let o = fanet(&["ablate", "--help"]);
    assert!(stdout(&o).contains("[default: 0,1,2]"));
}

#[test]
fn params_reports_presets() {
    let o = fanet(&["params"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for p in ["1-level", "2-level+hl", "3-level+hl+context", "inference total"] {
        assert!(text.contains(p), "{text}");
    }
}

#[test]
fn train_eval_detect_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_tiny(d);
    let data = d.join("data");
    let run = d.join("run");
    let o = fanet(&["gen-data", "--seed", "3", "--count", "8", "--out", data.to_str().unwrap(), "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(data.join("annotations.txt").exists());

    let o = fanet(&["train", "--config", &cfg, "--data", data.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["model.ckpt", "config.toml", "runlog.jsonl", "phase1.ckpt"] {
        assert!(run.join(f).exists(), "{f}");
    }

    let ckpt = run.join("model.ckpt");
    let o = fanet(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    let ap: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&ap), "{line}");

    let image = data.join("images/000000.png");
    let out = d.join("dets.txt");
    let drawn = d.join("drawn.png");
    let o = fanet(&[
        "detect",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--scales",
        "128",
        "--out",
        out.to_str().unwrap(),
        "--draw",
        drawn.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(drawn.exists());
    let text = fs::read_to_string(&out).unwrap();
    let mut last = f64::INFINITY;
    for line in text.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(f.len(), 6);
        assert_eq!(f[0], "000000");
        let v: Vec<f64> = f[1..].iter().map(|x| x.parse().unwrap()).collect();
        assert!(v[0] >= 0.0 && v[1] >= 0.0 && v[2] <= 128.0 && v[3] <= 128.0);
        assert!(v[4] <= last);
        last = v[4];
    }

    // Same flags, same outputs.
    let again = d.join("run2");
    let o = fanet(&["train", "--config", &cfg, "--data", data.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(fs::read(run.join("runlog.jsonl")).unwrap(), fs::read(again.join("runlog.jsonl")).unwrap());
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(again.join("model.ckpt")).unwrap());
}

#[test]
fn missing_checkpoint_is_a_single_line_error() {
    let o = fanet(&["eval", "--checkpoint", "/nonexistent/model.ckpt", "--data", "/nonexistent"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr(&o).trim_end().lines().count(), 1);
}
