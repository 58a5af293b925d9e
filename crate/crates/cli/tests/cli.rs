use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tiny_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml")
}

fn emoconv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emoconv")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn smoke_gen_train_evaluate_convert_synth() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_str().unwrap();
    let cfg = tiny_config();
    let cfg = cfg.to_str().unwrap();
    let o = emoconv(&["gen-corpus", "-c", cfg, "-o", root]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = emoconv(&["train", "-c", cfg, "-o", root, "--stage", "all", "--pretrain", "--quiet"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let o = emoconv(&["evaluate", "-c", cfg, "-o", root, "--json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["aggregate"]["uer"].as_f64().is_some());
    assert!(dir.path().join("eval/report.json").exists());

    let manifest = dir.path().join("corpus/corpus.test");
    let o = emoconv(&["convert", "-c", cfg, "-o", root, "--in", manifest.to_str().unwrap(), "--emotion", "amused"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let converted = dir.path().join("converted/amused/converted.tsv");
    assert!(converted.exists());
    let o = emoconv(&["synth", "-c", cfg, "-o", root, "--in", converted.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_dir(dir.path().join("audio")).unwrap().any(|e| e.unwrap().path().extension().is_some_and(|x| x == "wav")));
}

#[test]
fn train_without_corpus_names_missing_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = emoconv(&["train", "-c", tiny_config().to_str().unwrap(), "-o", dir.path().to_str().unwrap(), "--stage", "f0"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("corpus.train"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn usage_and_validation_exit_codes() {
    assert_eq!(code(&emoconv(&["train", "--stage", "f0"])), 1);
    assert_eq!(code(&emoconv(&["no-such-command"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_str().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(code(&emoconv(&["gen-corpus", "-c", missing.to_str().unwrap(), "-o", root])), 2);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[corpus]\nn_transcripts = 3\n").unwrap();
    assert_eq!(code(&emoconv(&["gen-corpus", "-c", bad.to_str().unwrap(), "-o", root])), 2);
    assert_eq!(code(&emoconv(&["--help"])), 0);
}

#[test]
fn seed_override_changes_the_corpus() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = tiny_config();
    let cfg = cfg.to_str().unwrap();
    for (dir, seed) in [(&a, "1"), (&b, "2")] {
        let o = emoconv(&["gen-corpus", "-c", cfg, "-o", dir.path().to_str().unwrap(), "--seed", seed, "--json"]);
        assert_eq!(code(&o), 0);
    }
    let read = |d: &tempfile::TempDir| std::fs::read_to_string(d.path().join("corpus/corpus.train")).unwrap();
    assert_ne!(read(&a), read(&b));
}

#[test]
fn grad_check_passes() {
    let o = emoconv(&["grad-check"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("model/translator_share_enc"));
    assert!(text.contains("model/f0_cnn"));
    assert!(text.contains("model/duration_cnn"));
    assert!(!text.contains("FAIL"));
}
