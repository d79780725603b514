use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vi(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vi"));
    c.args(args).env_remove("VI_SEED");
    if let Some(s) = env_seed {
        c.env("VI_SEED", s);
    }
    c.output().expect("run vi")
}

fn ok(args: &[&str]) -> String {
    let out = vi(args, None);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_train_embed_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("vi.conf");
    fs::write(&cfg, "# quick run\nbatches_per_epoch = 2\noutput_dim = 8\n").unwrap();
    let data = d.join("data");
    ok(&["synth", "--out", p(&data), "--works", "16", "--versions", "2", "--seed", "3"]);
    let manifest = data.join("manifest.tsv");
    let models = d.join("models");
    let out = ok(&[
        "train", "--config", p(&cfg), "--manifest", p(&manifest), "--features", "me,ha", "--out", p(&models), "--epochs",
        "1",
    ]);
    assert!(out.contains("loss"), "{out}");
    assert!(models.join("me.viwt").exists() && models.join("ha.epoch01.viwt").exists());
    let emb = d.join("emb");
    ok(&["embed", "--manifest", p(&manifest), "--models", p(&models), "--features", "me,ha", "--out", p(&emb)]);
    let report = d.join("eval.csv");
    ok(&["eval", "--manifest", p(&manifest), "--embeddings", p(&emb), "--features", "me,ha", "--out", p(&report)]);
    let csv = fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("metric,value\nmap,"), "{csv}");
    assert_eq!(csv.lines().count(), 7);
    ok(&["oracle", "--manifest", p(&manifest), "--embeddings", p(&emb), "--features", "me,ha", "--out", p(&d.join("or"))]);
    assert!(d.join("or/contributions.csv").exists());
    let pair = ok(&["pair", "--manifest", p(&manifest), "--embeddings", p(&emb), "w000_v0", "w000_v0"]);
    assert_eq!(pair, "features,distance\nMe,0.000000\nHa,0.000000\nMe+Ha,0.000000\n");

    let excl = d.join("excl.txt");
    fs::write(&excl, "w000_v0\nw000_v1\n").unwrap();
    let pruned = d.join("pruned.tsv");
    ok(&["prune", "--manifest", p(&manifest), "--exclude", p(&excl), "--out", p(&pruned)]);
    let text = fs::read_to_string(&pruned).unwrap();
    assert_eq!(text.lines().count(), 1 + 30);
    assert!(!text.contains("w000_"));
}

#[test]
fn env_seed_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, flag: &str, env: Option<&str>| {
        let out = dir.path().join(name);
        let o = vi(&["synth", "--out", p(&out), "--works", "2", "--versions", "2", "--seed", flag], env);
        assert!(o.status.success());
        fs::read(out.join("w001_v1.me.vife")).unwrap()
    };
    let a = run("a", "5", None);
    let b = run("b", "6", Some("5"));
    let c = run("c", "6", None);
    assert_eq!(a, b);
    assert_ne!(a, c);
    let bad = vi(&["synth", "--out", p(&dir.path().join("d"))], Some("x"));
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(vi(&["eval", "--manifest", "/nonexistent.tsv", "--embeddings", "e", "--features", "me", "--out", "o"], None).status.code(), Some(1));
    let data = d.join("data");
    ok(&["synth", "--out", p(&data), "--works", "1", "--versions", "1", "--audio-secs", "20"]);
    let wav = data.join("w000_v0.wav");
    let manifest = d.join("m.tsv");
    fs::write(&manifest, format!("track_id\twork_id\taudio_path\na\tw\t{}\nb\tw\t-\n", p(&wav))).unwrap();
    let out = vi(&["extract", "--manifest", p(&manifest), "--feature", "rh", "--out", p(&d.join("f"))], None);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("b: no audio path"));
    assert!(d.join("f/a.rh.vife").exists());
    let bad = vi(&["extract", "--manifest", p(&manifest), "--feature", "xx", "--out", p(&d.join("f"))], None);
    assert_ne!(bad.status.code(), Some(0));
    let me = vi(&["extract", "--manifest", p(&manifest), "--feature", "me", "--out", p(&d.join("f"))], None);
    assert_eq!(me.status.code(), Some(1));
}
