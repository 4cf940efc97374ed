use std::path::Path;
use std::process::{Command, Output};

fn siftkaze(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_siftkaze")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn class_setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    siftkaze(dir.path(), &["synth", "classes", "--count", "3", "--per-class", "5", "--size", "64", "--seed", "1", "--out", "data"]);
    let cfg = r#"{
        "dataset": {"root": "data", "layout": "class_folders"},
        "seed": 2,
        "cache_dir": "cache",
        "split": {"n_train": [2], "test_cap": 3},
        "bovw": {"vocab_sift": 6, "vocab_kaze": 6}
    }"#;
    std::fs::write(dir.path().join("cfg.json"), cfg).unwrap();
    dir
}

#[test]
fn bench_writes_report_and_report_reads_it_back() {
    let dir = class_setup();
    siftkaze(dir.path(), &["--config", "cfg.json", "bench", "--out", "res"]);
    let csv = std::fs::read_to_string(dir.path().join("res/report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("feature_set,classifier,n_train,accuracy,support_vectors_total,train_seconds,test_seconds"));
    assert_eq!(lines.count(), 6);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("res/report.json")).unwrap()).unwrap();
    assert!(json.is_object());

    let shown = siftkaze(dir.path(), &["report", "--input", "res/report.csv"]);
    let text = String::from_utf8(shown.stdout).unwrap();
    assert!(text.contains("mcm accuracy") && text.contains("svm accuracy"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = class_setup();
    siftkaze(dir.path(), &["--config", "cfg.json", "--seed", "9", "codebook", "--kind", "sift", "--out", "a.bvw"]);
    siftkaze(dir.path(), &["--config", "cfg.json", "--seed", "9", "codebook", "--kind", "sift", "--out", "b.bvw"]);
    siftkaze(dir.path(), &["--config", "cfg.json", "codebook", "--kind", "sift", "--out", "c.bvw"]);
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.bvw"), read("b.bvw"));
    assert_eq!(&read("a.bvw")[..4], b"BVW1");
    assert_ne!(read("a.bvw"), read("c.bvw"));
}

#[test]
fn encode_and_train_use_a_saved_codebook() {
    let dir = class_setup();
    siftkaze(dir.path(), &["--config", "cfg.json", "codebook", "--kind", "kaze", "--out", "k.bvw"]);
    let enc = siftkaze(dir.path(), &["--config", "cfg.json", "encode", "--codebook", "k.bvw"]);
    let text = String::from_utf8(enc.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("image_id,class,w0,w1,w2,w3,w4,w5"));
    assert_eq!(lines.count(), 15);

    siftkaze(
        dir.path(),
        &["--config", "cfg.json", "train", "--features", "kaze", "--classifier", "mcm", "--kaze-codebook", "k.bvw", "--out", "m.json"],
    );
    let model: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
    let models = model["models"].as_array().unwrap();
    assert_eq!(models.len(), 3);
    for m in models {
        for key in ["kind", "class_pair", "u", "v", "h", "C", "support_indices"] {
            assert!(m.get(key).is_some(), "missing {key}");
        }
        assert_eq!(m["u"].as_array().unwrap().len(), 6);
    }
}

#[test]
fn kos_curve_writes_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    siftkaze(dir.path(), &["synth", "boundary", "--count", "2", "--size", "96", "--out", "ann"]);
    std::fs::write(
        dir.path().join("k.json"),
        r#"{"dataset": {"root": "ann", "layout": "annotated_flat"}, "kos": {"n_grid": [50, 100]}}"#,
    )
    .unwrap();
    siftkaze(dir.path(), &["--config", "k.json", "kos-curve", "--out", "curves"]);
    for mode in ["full_box", "band"] {
        let text = std::fs::read_to_string(dir.path().join(format!("curves/kos_{mode}.csv"))).unwrap();
        assert!(text.starts_with("n_percent,mkos,detector,mode,beta\n"));
        assert_eq!(text.lines().count(), 5);
    }
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"dataset": {"root": ".", "layout": "class_folders"}, "colour": 1}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_siftkaze")).current_dir(dir.path()).args(["--config", "bad.json", "extract"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}
