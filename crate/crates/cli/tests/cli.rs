use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vitalsig(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vitalsig"))
        .args(args)
        .current_dir(cwd)
        .env("VITALSIG_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn run_is_byte_identical_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&vitalsig(&["synth", "--kind", "corpus", "--seed", "11", "--out", "corpus"], d));
    ok(&vitalsig(&["run", "corpus", "--seed", "2", "--out", "a"], d));
    ok(&vitalsig(&["run", "corpus", "--seed", "2", "--out", "b"], d));
    let a = read_dir_bytes(&d.join("a"));
    assert_eq!(a, read_dir_bytes(&d.join("b")));

    let quality = fs::read_to_string(d.join("a/quality.csv")).unwrap();
    assert_eq!(quality.lines().count(), 1 + 4);
    let models = fs::read_to_string(d.join("a/models.csv")).unwrap();
    for mode in ["rppg", "thermal", "early_fusion", "late_fusion"] {
        for model in ["rf", "svm"] {
            assert!(models.lines().any(|l| l.starts_with(&format!("{mode},{model},"))), "{mode} {model}");
        }
    }
    let corr = fs::read_to_string(d.join("a/correlation_r.csv")).unwrap();
    let rows: Vec<&str> = corr.lines().collect();
    assert_eq!(rows.len(), 1 + 7);
    assert!(rows.iter().all(|r| r.split(',').count() == 1 + 22));

    // report regenerates the same tables from report.json
    ok(&vitalsig(&["report", "--in", "a/report.json", "--out", "c"], d));
    assert_eq!(fs::read(d.join("a/models.csv")).unwrap(), fs::read(d.join("c/models.csv")).unwrap());
}

#[test]
fn zero_threshold_excludes_everything() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&vitalsig(&["synth", "--kind", "corpus", "--sessions", "2", "--out", "corpus"], d));
    fs::write(d.join("cfg.json"), r#"{"quality_threshold": 0}"#).unwrap();
    let out = vitalsig(&["run", "corpus", "--config", "cfg.json", "--out", "r"], d);
    assert_eq!(out.status.code(), Some(3));
    let errors = fs::read_to_string(d.join("r/errors.csv")).unwrap();
    assert!(errors.lines().skip(1).any(|l| l.contains(",TooFewSamples,")), "{errors}");
    assert!(fs::read_to_string(d.join("r/quality.csv")).unwrap().contains("true"));
}

#[test]
fn missing_manifest_is_partial() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&vitalsig(&["synth", "--kind", "corpus", "--sessions", "2", "--out", "corpus"], d));
    fs::write(d.join("corpus/broken.json"), "{").unwrap();
    let out = vitalsig(&["run", "corpus", "--out", "r"], d);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_fails() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("cfg.json"), r#"{"window_s": -1}"#).unwrap();
    let out = vitalsig(&["run", "x", "--config", "cfg.json", "--out", "r"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("window_s"));
}

#[test]
fn signal_subcommands() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&vitalsig(&["synth", "--kind", "rppg", "--bpm", "66", "--seed", "4", "--out", "s"], d));
    ok(&vitalsig(&["rppg", "--in", "s/rgb.csv", "--out", "hr.json"], d));
    let hr: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("hr.json")).unwrap()).unwrap();
    for key in ["window_s", "hop_s", "values", "per_patch", "quality"] {
        assert!(hr.get(key).is_some(), "{key}");
    }

    ok(&vitalsig(&["hrv", "--in", "hr.json", "--segment", "last120", "--out", "m.json"], d));
    let text = fs::read_to_string(d.join("m.json")).unwrap();
    let keys: Vec<usize> = ["\"hr\"", "\"sdnn\"", "\"rmssd\"", "\"pnn50\"", "\"ln_hf\"", "\"ln_lf\"", "\"ln_lf_hf\""]
        .iter()
        .map(|k| text.find(k).unwrap())
        .collect();
    assert!(keys.windows(2).all(|w| w[0] < w[1]), "{text}");
    let m: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!((m["hr"].as_f64().unwrap() - 66.0).abs() < 1.0);

    ok(&vitalsig(&["synth", "--kind", "thermal", "--out", "t"], d));
    ok(&vitalsig(&["thermal", "--in", "t/thermal.csv", "--out", "f.json"], d));
    let f: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("f.json")).unwrap()).unwrap();
    assert_eq!(f["rel_forehead.58"].as_f64(), Some(0.0));
    assert!(f.get("delta.18").is_some());

    ok(&vitalsig(&["synth", "--kind", "ecg", "--out", "e"], d));
    assert!(d.join("e/ecg_truth.json").exists());
}

#[test]
fn train_and_explain() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&vitalsig(
        &["synth", "--kind", "dataset", "--n-per-class", "20", "--features", "9", "--separation", "5", "--out", "ds"],
        d,
    ));
    let out = vitalsig(
        &[
            "train",
            "--dataset",
            "ds/dataset.json",
            "--mode",
            "early",
            "--model",
            "rf",
            "--out",
            "model.json",
            "--report",
            "rep.json",
        ],
        d,
    );
    ok(&out);
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("rep.json")).unwrap()).unwrap();
    assert_eq!(rep["mode"], "early_fusion");
    assert!(rep["avg_accuracy"].as_f64().unwrap() >= 0.9);

    ok(&vitalsig(
        &[
            "explain",
            "--model",
            "model.json",
            "--dataset",
            "ds/dataset.json",
            "--permutations",
            "100",
            "--out",
            "shap.json",
        ],
        d,
    ));
    let shap: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("shap.json")).unwrap()).unwrap();
    let ranked = shap.as_array().unwrap();
    assert_eq!(ranked.len(), 9);
    let top: Vec<&str> = ranked[..2].iter().map(|r| r["feature"].as_str().unwrap()).collect();
    assert!(top.contains(&"f00") && top.contains(&"f01"), "{top:?}");
    assert_eq!(ranked.iter().filter(|r| r["top10"] == true).count(), 9);

    ok(&vitalsig(
        &["train", "--dataset", "ds/dataset.json", "--mode", "late", "--model", "svm", "--out", "late.json"],
        d,
    ));
}

#[test]
fn agreement_table() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let pairs: Vec<serde_json::Value> = (0..12)
        .map(|i| {
            let q = [0.25, 0.29, 0.31, 0.35, 0.40, 0.45][i % 6];
            let hr = 60.0 + i as f64 * 2.0;
            let m = |hr: f64| {
                serde_json::json!({"hr": hr, "sdnn": 40.0 + hr / 3.0, "rmssd": 30.0 + hr / 5.0, "pnn50": hr / 10.0,
                    "ln_hf": 5.0 + hr / 100.0, "ln_lf": 6.0 - hr / 90.0, "ln_lf_hf": 1.0 - hr / 100.0 - hr / 90.0})
            };
            serde_json::json!({"session_id": format!("s{i}"), "quality": q, "rppg": m(hr + q * 10.0 * (i % 3) as f64), "ecg": m(hr)})
        })
        .collect();
    fs::write(d.join("pairs.json"), serde_json::to_string(&pairs).unwrap()).unwrap();
    ok(&vitalsig(&["agree", "--pairs", "pairs.json", "--thresholds", "0.30:0.48:0.02", "--out", "t3.csv"], d));
    let csv = fs::read_to_string(d.join("t3.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("threshold,r_hr,"));
    assert!(header.ends_with(",n"));
    // 0.30 keeps only 4 pairs, all higher thresholds more
    assert_eq!(csv.lines().count(), 1 + 10);
}
