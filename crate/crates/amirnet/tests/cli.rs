use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn amirnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amirnet")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = amirnet(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let out = amirnet(&[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_subcommand_and_device_fail() {
    assert!(!amirnet(&["frobnicate"]).status.success());
    let dir = tempfile::tempdir().unwrap();
    let out = amirnet(&["--device", "cuda", "--out-dir", p(dir.path()), "synth-clean", "--n", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("only `cpu`"));
}

#[test]
fn missing_checkpoint_has_its_own_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.ckpt");
    let out = amirnet(&["eval", "--checkpoint", p(&missing)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint not found"));
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "stage1_epochs = 3\ncluster_interval = 1\n").unwrap();
    let out = amirnet(&["--config", p(&cfg), "train-stage1", "--corpus", p(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage1_epochs"));
}

#[test]
fn full_pipeline_smoke_on_sixteen_images() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (clean, corpus, run) = (root.join("clean"), root.join("corpus"), root.join("run"));
    ok(&["--seed", "4", "--out-dir", p(&clean), "synth-clean", "--n", "4", "--height", "32", "--width", "32"]);
    let counts = ok(&[
        "--seed", "4", "--out-dir", p(&corpus), "gen-data", "--clean-dir", p(&clean),
        "--types", "gaussian_noise,gaussian_blur,low_light,block_compression", "--n-per-type", "4",
    ]);
    assert_eq!(counts.lines().count(), 4);

    let cfg = root.join("cfg.toml");
    std::fs::write(&cfg, "patch_size = 32\nbatch_size = 4\nstage1_epochs = 8\ncluster_interval = 2\nstage2_epochs = 2\n").unwrap();
    let common = ["--config", p(&cfg), "--out-dir", p(&run)];
    let flags = ["--corpus", p(&corpus), "--patch-size", "16", "--stage1-epochs", "4", "--cluster-interval", "1"];
    ok(&[&common[..], &["train-stage1"], &flags[..]].concat());
    let s1 = run.join("stage1.ckpt");
    assert!(s1.exists());
    let log = std::fs::read_to_string(run.join("stage1_log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 5);
    let written = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(written.contains("patch_size = 16") && written.contains("batch_size = 4"));

    ok(&[&common[..], &["train-stage2", "--checkpoint", p(&s1)]].concat());
    let s2 = run.join("stage2.ckpt");
    let report = ok(&["--out-dir", p(&run), "eval", "--checkpoint", p(&s2), "--split", "all"]);
    assert_eq!(report.lines().count(), 1 + 4 + 1);
    assert!(report.lines().last().unwrap().starts_with("average\t16\t"));

    ok(&["--out-dir", p(&run), "embed-dump", "--checkpoint", p(&s2)]);
    let csv = std::fs::read_to_string(run.join("embeddings.csv")).unwrap();
    assert_eq!(csv.lines().count(), 17);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 163);

    let tree = ok(&["tree-dump", "--checkpoint", p(&s1)]);
    assert!(tree.lines().count() > 1);
    assert_eq!(tree.lines().nth(1).unwrap().split('\t').nth(2).unwrap().len(), 30);

    assert!(start.elapsed() < Duration::from_secs(300), "{:?}", start.elapsed());
}
