use std::path::Path;
use std::process::{Command, Output};

fn rampsim(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rampsim"))
        .args(args)
        .env("RAMPSIM_OUT", root)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_summary_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = rampsim(
            &["run", "--scenario", "base", "--seed", "7", "--duration", "60", "--warmup", "20", "--out", out.to_str().unwrap()],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let x = std::fs::read(a.join("summary.json")).unwrap();
    let y = std::fs::read(b.join("summary.json")).unwrap();
    assert_eq!(x, y);
    assert!(a.join("detectors.csv").exists());
    assert!(a.join("manifest.json").exists());
    assert!(!a.join("trajectory.csv").exists());
}

#[test]
fn pure_human_baseline_and_default_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let o = rampsim(
        &["run", "--controller", "rule", "--cav", "0.0", "--duration", "30", "--warmup", "0", "--trace"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("run-rule-seed0");
    let text = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(text.lines().skip(1).all(|l| !l.contains(",CAV,")));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["penetration"], 0.0);
}

#[test]
fn unknown_key_fails_with_exit_one_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.toml");
    std::fs::write(&file, "seed = 1\n[idm]\ncoolness = 0.5\n").unwrap();
    let o = rampsim(&["run", "--scenario", file.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("coolness"), "{}", stderr(&o));
}

#[test]
fn bad_flags_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rampsim(&["run", "--controller", "mappo"], dir.path()).status.code(), Some(1));
    assert_eq!(rampsim(&["run", "--cav", "2"], dir.path()).status.code(), Some(1));
    assert_eq!(rampsim(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(rampsim(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn sweep_emits_one_row_per_cell_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let o = rampsim(
        &[
            "sweep", "--demand", "300", "--cav", "0,1", "--controller", "rule", "--seeds", "0..2", "--duration", "30",
            "--warmup", "0", "--out", out.to_str().unwrap(), "--parallel", "2",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = std::fs::read_to_string(out.join("sweep_rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 4);
    let cells = std::fs::read_to_string(out.join("sweep_cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 1 + 2);
}

#[test]
fn dynamic_demand_with_zero_profile_and_shift() {
    let dir = tempfile::tempdir().unwrap();
    let profile = dir.path().join("zero.toml");
    std::fs::write(&profile, "[[points]]\nt = 0.0\nmainline = 0.0\nramp = 0.0\n").unwrap();
    let out = dir.path().join("d");
    let o = rampsim(
        &[
            "dynamic-demand", "--profile", profile.to_str().unwrap(), "--controller", "rule", "--duration", "400",
            "--warmup", "0", "--cav", "0.7", "--shift-at", "350", "--shift-to", "0.3", "--out", out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["bottleneck.csv", "ramp.csv", "mainline.csv"] {
        let text = std::fs::read_to_string(out.join("rule/seed-0").join(f)).unwrap();
        assert!(text.lines().skip(1).all(|l| l.ends_with(",0.0,0.0")), "{f}: {text}");
    }
    let rec = std::fs::read_to_string(out.join("recovery.csv")).unwrap();
    assert_eq!(rec.lines().count(), 2, "{rec}");
}

#[test]
fn replay_reproduces_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = rampsim(
        &["run", "--seed", "3", "--duration", "30", "--warmup", "0", "--controller", "trust_full", "--out", a.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let m = a.join("manifest.json");
    let o = rampsim(&["replay", m.to_str().unwrap(), "--out", b.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["summary.json", "detectors.csv", "merges.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn train_writes_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.toml");
    std::fs::write(&cfg, "episodes = 1\nupdate_every = 5\n[learner]\nbatch_size = 8\nhidden = 8\ncritic_hidden = 8\n").unwrap();
    let out = dir.path().join("t");
    let o = rampsim(
        &["train", "--duration", "40", "--warmup", "0", "--train-config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = out.join("checkpoint.json");
    assert!(ck.exists());
    let run = dir.path().join("r");
    let o = rampsim(
        &[
            "run", "--controller", "learn_game", "--duration", "30", "--warmup", "0", "--checkpoint", ck.to_str().unwrap(),
            "--out", run.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
}
