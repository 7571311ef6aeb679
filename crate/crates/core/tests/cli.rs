use std::path::Path;
use std::process::{Command, Output};

fn dstl(work: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dstl"))
        .arg("--work-dir")
        .arg(work)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = dstl(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = dstl(dir.path(), &["score", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "just words\n").unwrap();
    let o = dstl(dir.path(), &["--config", "bad.cfg", "gen-data"]);
    assert_eq!(o.status.code(), Some(2));
    let o = dstl(dir.path(), &["gen-data", "--corpus.no_such_key", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = dstl(dir.path(), &["decode", "--model", "missing.ckpt"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn scoring_identical_files_gives_zero() {
    let dir = tempfile::tempdir().unwrap();
    let body = "{\"utt_id\":\"a\",\"hyp_text\":\"ab cd\",\"score\":-1.0}\n{\"utt_id\":\"b\",\"hyp_text\":\"e\",\"score\":-2.0}\n";
    std::fs::write(dir.path().join("r.jsonl"), body).unwrap();
    std::fs::write(dir.path().join("h.jsonl"), body).unwrap();
    let o = dstl(dir.path(), &["score", "--ref", "r.jsonl", "--hyp", "h.jsonl"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "set,wer,subs,ins,dels\nr,0.0000,0,0,0\n");
}

#[test]
fn config_file_and_flags_compose() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("g.cfg"), "corpus.num_utts = 3\nout_dir = first\n").unwrap();
    let o = dstl(dir.path(), &["--config", "g.cfg", "gen-data", "--out-dir", "second", "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0));
    let echo = String::from_utf8_lossy(&o.stderr);
    assert!(echo.contains("# corpus.num_utts = 3"));
    assert!(echo.contains("# seed = 4"));
    let manifest = std::fs::read_to_string(dir.path().join("second/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 3);
}

#[test]
fn end_to_end_small_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let tiny = [
        "--set", "encoder.hidden_units=4", "--set", "encoder.num_layers=1",
        "--plan.burn_in.steps", "3", "--plan.train_main.steps", "5", "--plan.train_main.ckpt_every", "2",
        "--plan.fine_tune.steps", "1", "--plan.batch_size", "2",
    ];
    assert_eq!(dstl(w, &["gen-data", "--num-utts", "8", "--out-dir", "sup"]).status.code(), Some(0));
    let mut args = vec!["train", "--kind", "ctc", "--train", "sup/manifest.jsonl", "--ckpt-dir", "ck", "--out", "m.ckpt"];
    args.extend(tiny);
    let o = dstl(w, &args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_dir(w.join("ck")).unwrap().count(), 3);

    let o = dstl(w, &["avg-ckpt", "--last", "5", "ck"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("averaged 3 of 3"));

    let o = dstl(w, &["decode", "--model", "m.ckpt", "--input", "sup/manifest.jsonl", "--lm", "sup/lm.json", "--out", "h.jsonl"]);
    assert_eq!(o.status.code(), Some(0));
    let hyps = std::fs::read_to_string(w.join("h.jsonl")).unwrap();
    assert_eq!(hyps.lines().count(), 8);
    for line in hyps.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["utt_id"].is_string() && v["hyp_text"].is_string() && v["score"].is_number());
    }
    let o = dstl(w, &["score", "--ref", "sup/manifest.jsonl", "--hyp", "h.jsonl", "--name", "dev"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("set,wer,subs,ins,dels\ndev,"));

    let o = dstl(w, &["label", "--teacher", "m.ckpt", "--mode", "frame-topk", "--input", "sup/manifest.jsonl", "--out", "fl"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(w.join("fl/manifest.jsonl").exists());
    let o = dstl(w, &["label", "--teacher", "m.ckpt", "--mode", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
}
