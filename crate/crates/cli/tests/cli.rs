use std::path::Path;
use std::process::{Command, Output};

const VERBS: [&str; 11] = [
    "init", "pretrain", "detect", "refine", "expand", "run-loop", "importance", "attention", "synth", "serve", "report",
];

fn kgloop(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgloop"))
        .args(args)
        .arg("--dir")
        .arg(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = kgloop(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn every_verb_takes_config_and_seed() {
    for verb in VERBS {
        let out = Command::new(env!("CARGO_BIN_EXE_kgloop")).args([verb, "--help"]).output().unwrap();
        let help = String::from_utf8(out.stdout).unwrap();
        assert!(help.contains("--config") && help.contains("--seed"), "{verb}");
    }
}

#[test]
fn workflow_from_init_to_report() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("work");
    let conf = dir.path().join("tiny.conf");
    std::fs::write(
        &conf,
        "periods = 2\nsynth.pretrain_users = 80\nsynth.users_per_period = 40\n\
         kge.epochs = 3\ndetector.epochs = 3\nrefine.steps = 5\nmcts.budget = 100\n",
    )
    .unwrap();
    let c = conf.to_str().unwrap();

    let init = ok(&work, &["init", "--config", c, "--seed", "4"]);
    assert!(init.contains("160 users"), "{init}");
    ok(&work, &["pretrain", "--config", c, "--seed", "4"]);
    assert!(!kgloop(&work, &["init", "--config", c, "--seed", "4"]).status.success());

    let metrics = ok(&work, &["run-loop", "--config", c, "--seed", "4", "--run", "first"]);
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.starts_with("period\t"));
    let report = std::fs::read_to_string(work.join("runs/first/metrics.tsv")).unwrap();
    assert_eq!(report, metrics);

    // the same seed from scratch gives the same report
    let other = dir.path().join("other");
    ok(&other, &["init", "--config", c, "--seed", "4"]);
    assert_eq!(ok(&other, &["run-loop", "--config", c, "--seed", "4"]), metrics);

    let table = ok(&work, &["importance", "--config", c]);
    assert!(table.lines().count() > 10);
    let traj = ok(&work, &["importance", "--config", c, "--entity", "insomnia"]);
    assert_eq!(traj.lines().count(), 3);
    let att = ok(&work, &["attention", "--config", c, "--entity", "insomnia"]);
    assert!(att.lines().any(|l| l.starts_with("alpha\t")));
    assert!(ok(&work, &["detect", "--config", c]).contains("# precision"));
    assert!(ok(&work, &["refine", "--config", c]).starts_with("triplet\t"));
    assert!(ok(&work, &["expand", "--config", c]).starts_with("id\t"));
    ok(&work, &["report", "--config", c, "--run", "second"]);
    assert!(work.join("runs/second/decisions.log").exists());

    let bad = kgloop(&work, &["attention", "--config", c, "--entity", "no such thing"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown entity"));
    let bad = kgloop(&work, &["report", "--set", "no_such_key=1"]);
    assert!(!bad.status.success());
}

#[test]
fn synth_writes_a_corpus_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.tsv");
    let msg = ok(
        dir.path(),
        &[
            "synth",
            "--seed",
            "1",
            "--set",
            "periods=1",
            "--set",
            "synth.pretrain_users=6",
            "--set",
            "synth.users_per_period=4",
            "--out",
            out.to_str().unwrap(),
        ],
    );
    assert!(msg.starts_with("10 users"), "{msg}");
    let corpus = kgloop_core::closed_loop::load_corpus(&out).unwrap();
    assert_eq!(corpus.len(), 10);
}
