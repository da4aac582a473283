use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn metalstm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metalstm"))
        .current_dir(dir)
        .env("METALSTM_THREADS", "2")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = metalstm(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, tasks: &str) {
    ok(
        dir,
        &["synth", "--tasks", tasks, "--seed", "3", "--out", "syn", "--train", "64", "--dev", "16", "--test", "24"],
    );
}

fn read(dir: &Path, rel: &str) -> String {
    fs::read_to_string(dir.join(rel)).unwrap()
}

#[test]
fn train_is_reproducible_and_logs_every_task() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "3");
    let base = ["train", "--config", "syn/synth.cfg", "--seed", "1", "--set", "max_epochs=2"];
    ok(dir, &[&base[..], &["--out", "a"]].concat());
    ok(dir, &[&base[..], &["--out", "b"]].concat());
    assert_eq!(fs::read(dir.join("a/train_log.tsv")).unwrap(), fs::read(dir.join("b/train_log.tsv")).unwrap());
    let log = read(dir, "a/train_log.tsv");
    for t in ["synth0", "synth1", "synth2"] {
        assert_eq!(log.lines().filter(|l| l.split('\t').nth(1) == Some(t)).count(), 2, "{t}");
    }
    for f in ["best.ckpt", "final.ckpt", "meta.ckpt", "report.tsv", "vocab.txt", "embeddings.txt", "run.tsv"] {
        assert!(dir.join("a").join(f).is_file(), "{f}");
    }
    assert!(read(dir, "a/run.tsv").starts_with("seed\t1\n"));
    let eval = ok(dir, &["eval", "--config", "syn/synth.cfg", "--checkpoint", "a/best.ckpt", "--out", "a"]);
    assert!(eval.contains("eval_test.tsv"));
    assert_eq!(read(dir, "a/eval_test.tsv"), read(dir, "a/report.tsv"));
}

#[test]
fn invalid_config_fails_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("bad.cfg"), "[task:x]\nkind = classification\ndata = missing.tsv\n").unwrap();
    let out = metalstm(dir, &["train", "--config", "bad.cfg", "--out", "run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.tsv"));
    assert!(!dir.join("run").exists());
    let out = metalstm(dir, &["train", "--config", "bad.cfg", "--arch", "lstm-9000"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn transfer_keeps_meta_and_rejects_bad_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "2");
    ok(dir, &["train", "--config", "syn/synth.cfg", "--set", "max_epochs=1", "--out", "src"]);
    ok(
        dir,
        &["transfer", "--config", "syn/synth.cfg", "--meta", "src/meta.ckpt", "--task", "synth0", "--set", "max_epochs=1", "--out", "tr"],
    );
    let report = read(dir, "tr/transfer_synth0.tsv");
    assert!(report.contains("meta_unchanged\ttrue"), "{report}");
    let before = report.lines().next().unwrap().split('\t').nth(1).unwrap();
    let after = report.lines().nth(1).unwrap().split('\t').nth(1).unwrap();
    assert_eq!(before, after);

    let mut bytes = fs::read(dir.join("src/meta.ckpt")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    fs::write(dir.join("bad.ckpt"), bytes).unwrap();
    let out = metalstm(dir, &["transfer", "--config", "syn/synth.cfg", "--meta", "bad.ckpt", "--out", "tr2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));

    let out = metalstm(
        dir,
        &["transfer", "--config", "syn/synth.cfg", "--meta", "src/meta.ckpt", "--set", "z=5", "--out", "tr3"],
    );
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(!out.status.success());
    assert!(err.contains("expected (16, 16, 8, 5)") && err.contains("found (16, 16, 8, 8)"), "{err}");
}

#[test]
fn leave_one_out_reports_every_task() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "4");
    ok(
        dir,
        &["transfer", "--config", "syn/synth.cfg", "--leave-one-out", "--set", "max_epochs=1", "--out", "loo"],
    );
    for k in 0..4 {
        let r = read(dir, &format!("loo/transfer_synth{k}.tsv"));
        assert!(r.contains("meta_unchanged\ttrue"));
        assert!(dir.join(format!("loo/meta_without_synth{k}.ckpt")).is_file());
    }
}

#[test]
fn diagnose_writes_reports_and_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "2");
    ok(dir, &["train", "--config", "syn/synth.cfg", "--set", "max_epochs=1", "--out", "m"]);
    fs::write(dir.join("in.txt"), "w01 w02 w03\nw04\n").unwrap();
    ok(
        dir,
        &["diagnose", "--config", "syn/synth.cfg", "--checkpoint", "m/best.ckpt", "--input", "in.txt", "--out", "d"],
    );
    let gc = read(dir, "d/gradcheck.tsv");
    for line in gc.lines().skip(1).filter(|l| !l.starts_with('#')) {
        let err: f64 = line.split('\t').nth(1).unwrap().parse().unwrap();
        assert!(err < 1e-4, "{line}");
        assert!(line.ends_with("PASS"));
    }
    let trace = read(dir, "d/trace.tsv");
    let blocks: Vec<&str> = trace.split("\n\n").collect();
    assert_eq!(blocks.len(), 2);
    assert_eq!(blocks[0].lines().count(), 4);
    assert!(blocks[1].lines().nth(1).unwrap().contains("\tNA\tNA\tNA\tNA\t"));

    fs::write(dir.join("empty.txt"), "\n  \n").unwrap();
    let out = metalstm(dir, &["diagnose", "--config", "syn/synth.cfg", "--input", "empty.txt", "--out", "e"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("usage"));
    assert!(!dir.join("e").exists());
}

#[test]
fn diagnose_reports_reference_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("ref.cfg"),
        "arch = single-meta\nd = 100\nh = 100\nm = 20\nz = 20\nsynth_tasks = 1\nsynth_train = 4\nsynth_dev = 2\nsynth_test = 2\n",
    )
    .unwrap();
    ok(dir, &["diagnose", "--config", "ref.cfg", "--out", "p"]);
    let params = read(dir, "p/params.tsv");
    let cell = |kind: &str| -> Vec<usize> {
        let line = params.lines().find(|l| l.split('\t').nth(2) == Some(kind)).unwrap();
        line.split('\t').skip(3).map(|v| v.parse().unwrap()).collect()
    };
    assert_eq!(cell("Meta"), vec![18_080, 18_080, 18_080]);
    assert_eq!(cell("Basic")[1], 24_000);
    assert_eq!(cell("Meta")[1] + cell("Basic")[1], 42_080);
    ok(dir, &["diagnose", "--config", "ref.cfg", "--arch", "single-lstm", "--out", "q"]);
    let params = read(dir, "q/params.tsv");
    assert!(params.lines().any(|l| l.ends_with("\tStandard\t80400\t80400\t80400")), "{params}");
}
