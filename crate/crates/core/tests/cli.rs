use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn sawt(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_sawt"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = sawt(args, "");
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn normalize_strips_diacritics() {
    let out = sawt(&["normalize"], "كَتَبَ\n٨٠% مرحبا!\n");
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "كتب\n80% مرحبا\n");
}

#[test]
fn translit_round_trip() {
    let out = sawt(&["translit", "--to-bw"], "باب\n");
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "bAb\n");
    let back = sawt(&["translit", "--from-bw"], "ktb\n");
    assert_eq!(String::from_utf8(back.stdout).unwrap(), "كتب\n");
}

#[test]
fn exit_codes() {
    assert_eq!(sawt(&["no-such-command"], "").status.code(), Some(2));
    assert_eq!(sawt(&["--version"], "").status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "not json\n").unwrap();
    let out = sawt(&["extract-mels", "--manifest", p(&bad), "--out", p(dir.path())], "");
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"], "data");
}

#[test]
fn unknown_config_key_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["make-toy", "--n", "4", "--out", p(&d.join("toy"))]);
    let manifest = d.join("toy/manifest.jsonl");
    ok(&["fit-units", "--manifest", p(&manifest), "--k", "8", "--out", p(&d.join("units.json"))]);
    let cfg = d.join("over.json");
    std::fs::write(&cfg, r#"{"no_such_knob": 1}"#).unwrap();
    let out = sawt(
        &[
            "pretrain", "--manifest", p(&manifest), "--units", p(&d.join("units.json")), "--config", p(&cfg), "--out",
            p(&d.join("pre")),
        ],
        "",
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn describe_base_preset() {
    let out = ok(&["describe", "--preset", "paper"]);
    let total = out.lines().find(|l| l.starts_with("total")).unwrap();
    let n: f64 = total.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((n / 155e6 - 1.0).abs() <= 0.05, "{total}");
}

/// Pre-training is reproducible, and a resumed run continues the same curve.
#[test]
fn pretrain_determinism_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["make-toy", "--seed", "3", "--n", "8", "--out", p(&d.join("toy"))]);
    let manifest = d.join("toy/manifest.jsonl");
    let units = d.join("units.json");
    ok(&["fit-units", "--manifest", p(&manifest), "--k", "16", "--out", p(&units)]);
    let pre = |out: &Path, steps: &str, resume: bool| {
        let mut args = vec![
            "pretrain", "--manifest", p(&manifest), "--units", p(&units), "--steps", steps, "--out", p(out),
        ];
        if resume {
            args.push("--resume");
        }
        ok(&args);
        std::fs::read_to_string(out.join("train.jsonl")).unwrap()
    };
    let a = pre(&d.join("a"), "6", false);
    let b = pre(&d.join("b"), "6", false);
    assert_eq!(a.lines().count(), 6);
    assert_eq!(a, b);

    let c = d.join("c");
    pre(&c, "3", false);
    let resumed = pre(&c, "6", true);
    assert_eq!(resumed, a);
    let ck = |dir: &Path| std::fs::read(dir.join("checkpoint.swar")).unwrap();
    assert_eq!(ck(&c), ck(&d.join("a")));
    let cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(c.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["settings"]["max_updates"], 6);
}

/// Every task runs end to end from a pre-trained checkpoint.
#[test]
fn task_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["make-toy", "--seed", "5", "--n", "6", "--dialects", "2", "--out", p(&d.join("toy"))]);
    let manifest = d.join("toy/manifest.jsonl");
    let m = p(&manifest);
    let units = d.join("units.json");
    ok(&["fit-units", "--manifest", m, "--k", "16", "--out", p(&units)]);
    ok(&["pretrain", "--manifest", m, "--units", p(&units), "--steps", "2", "--out", p(&d.join("pre"))]);
    let pre_ckpt = d.join("pre/checkpoint.swar");

    ok(&["finetune-asr", "--ckpt", p(&pre_ckpt), "--manifest", m, "--steps", "2", "--out", p(&d.join("asr"))]);
    let asr = d.join("asr/checkpoint.swar");
    let hyps = d.join("hyps.jsonl");
    ok(&["transcribe", "--ckpt", p(&asr), "--manifest", m, "--beam", "2", "--out", p(&hyps)]);
    assert_eq!(std::fs::read_to_string(&hyps).unwrap().lines().count(), 6);
    let lm = d.join("lm.swar");
    ok(&["train-lm", "--manifest", m, "--ckpt", p(&asr), "--steps", "3", "--out", p(&lm)]);
    let fused = ok(&["transcribe", "--ckpt", p(&asr), "--manifest", m, "--lm", p(&lm), "--lambda", "0.5"]);
    assert_eq!(fused.lines().count(), 6);
    let report = ok(&["evaluate", "--refs", m, "--hyps", p(&hyps), "--level", "char"]);
    let first: serde_json::Value = serde_json::from_str(report.lines().next().unwrap()).unwrap();
    assert_eq!(first["n_utterances"], 6);

    ok(&["finetune-tts", "--ckpt", p(&pre_ckpt), "--manifest", m, "--steps", "2", "--out", p(&d.join("tts"))]);
    let wav = d.join("out.wav");
    ok(&[
        "synthesize", "--ckpt", p(&d.join("tts/checkpoint.swar")), "--text", "اب", "--max-frames", "5", "--out", p(&wav),
    ]);
    assert!(std::fs::metadata(&wav).unwrap().len() > 44);

    ok(&["finetune-did", "--ckpt", p(&pre_ckpt), "--manifest", m, "--steps", "2", "--out", p(&d.join("did"))]);
    let classes = ok(&["classify", "--ckpt", p(&d.join("did/checkpoint.swar")), "--manifest", m]);
    for line in classes.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let sum: f64 = v["posterior"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
}
