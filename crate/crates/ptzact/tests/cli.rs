use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ptzact(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptzact"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .expect("spawn ptzact")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = ptzact(dir, args);
    assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
    stdout(&o)
}

fn labels(dir: &Path, count: usize, seed: u64, noisy: bool) -> String {
    let seed = seed.to_string();
    ok(dir, &["--seed", &seed, "scene-gen", "--count", &count.to_string()]);
    let scene = dir.join("scene.jsonl");
    let mut args = vec!["--seed", &seed, "synth", "--scene", scene.to_str().unwrap()];
    if noisy {
        args.push("--noisy");
    }
    ok(dir, &args);
    dir.join("labels.jsonl").to_string_lossy().into_owned()
}

#[test]
fn encode_prints_canonical_symbols() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(d.path(), &["encode", "--pan", "37", "--tilt", "-12", "--zoom", "150"]);
    assert_eq!(
        out.trim(),
        "<PAN> <+> <20> <10> <5> <2> <TILT> <-> <10> <2> <ZOOM> <100> <50> <END>"
    );
}

#[test]
fn decode_inverts_encode_for_symbols_and_ids() {
    let d = tempfile::tempdir().unwrap();
    for (pan, tilt, zoom) in [("0", "0", "0"), ("-999", "8", "999"), ("45", "-3", "70")] {
        let args = ["encode", "--pan", pan, "--tilt", tilt, "--zoom", zoom];
        let syms = ok(d.path(), &args);
        let mut dec = vec!["decode"];
        dec.extend(syms.split_whitespace());
        assert_eq!(ok(d.path(), &dec).trim(), format!("{pan} {tilt} {zoom}"));
        let mut with_ids = args.to_vec();
        with_ids.push("--ids");
        let ids = ok(d.path(), &with_ids);
        let mut dec = vec!["decode"];
        dec.extend(ids.split_whitespace());
        assert_eq!(ok(d.path(), &dec).trim(), format!("{pan} {tilt} {zoom}"));
    }
}

#[test]
fn decode_strict_rejects_reordered_markers_but_lenient_accepts() {
    let d = tempfile::tempdir().unwrap();
    let toks = ["<TILT>", "<+>", "<1>", "<PAN>", "<->", "<2>", "<ZOOM>", "<END>"];
    let mut args = vec!["decode"];
    args.extend(toks);
    assert_eq!(ptzact(d.path(), &args).status.code(), Some(2));
    args.insert(1, "--lenient");
    assert_eq!(ok(d.path(), &args).trim(), "-2 1 0");
}

#[test]
fn negative_zoom_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let o = ptzact(d.path(), &["encode", "--zoom", "-5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("zoom must be non-negative"), "{}", stderr(&o));
}

#[test]
fn parse_errors_and_bad_configs_exit_two() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(ptzact(d.path(), &["bogus"]).status.code(), Some(2));
    assert_eq!(ptzact(d.path(), &["encode", "--pan", "x"]).status.code(), Some(2));
    let cfg = d.path().join("bad.toml");
    fs::write(&cfg, "[grpo]\nclip_eps = -1.0\n").unwrap();
    let o = ptzact(
        d.path(),
        &["--config", cfg.to_str().unwrap(), "scene-gen", "--count", "3"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!d.path().join("scene.jsonl").exists());
    fs::write(&cfg, "[grpo]\nunknown_key = 1\n").unwrap();
    assert_eq!(
        ptzact(d.path(), &["--config", cfg.to_str().unwrap(), "encode"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(ptzact(d.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_or_malformed_input_is_a_data_error() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(
        ptzact(d.path(), &["fit", "--input", "/definitely/not/here.jsonl"])
            .status
            .code(),
        Some(3)
    );
    let bad = d.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\": 1}\n").unwrap();
    let o = ptzact(d.path(), &["fit", "--input", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains(":1"), "{}", stderr(&o));
}

#[test]
fn scene_gen_is_deterministic_and_allows_zero() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(a.path(), &["--seed", "9", "scene-gen", "--count", "25"]);
    ok(b.path(), &["--seed", "9", "scene-gen", "--count", "25"]);
    let sa = fs::read(a.path().join("scene.jsonl")).unwrap();
    assert_eq!(sa, fs::read(b.path().join("scene.jsonl")).unwrap());
    assert_eq!(String::from_utf8(sa).unwrap().lines().count(), 25);
    ok(a.path(), &["scene-gen", "--count", "0"]);
    assert!(fs::read(a.path().join("scene.jsonl")).unwrap().is_empty());
    assert!(!a.path().join("scene.jsonl.partial").exists());
}

#[test]
fn scene_gen_rejects_inverted_range() {
    let d = tempfile::tempdir().unwrap();
    let o = ptzact(d.path(), &["scene-gen", "--count", "3", "--azimuth", "10,-10"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_and_eval_on_oracle_labels() {
    let d = tempfile::tempdir().unwrap();
    let input = labels(d.path(), 300, 5, false);
    let out = ok(d.path(), &["fit", "--input", &input, "--kind", "rf"]);
    assert!(out.contains("R2"), "{out}");
    let eval = d.path().join("eval.json");
    ok(d.path(), &["eval", "--input", &input, "--policy", "oracle"]);
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&eval).unwrap()).unwrap();
    assert_eq!(v["metrics"]["completion_rate"], 1.0);
    let model = d.path().join("model.json");
    ok(
        d.path(),
        &[
            "eval",
            "--input",
            &input,
            "--policy",
            "model",
            "--model",
            model.to_str().unwrap(),
        ],
    );
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&eval).unwrap()).unwrap();
    assert!(v["metrics"]["mean_iou"].as_f64().unwrap() > 0.8, "{v}");
    let o = ptzact(d.path(), &["eval", "--input", &input, "--policy", "model"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ols_fits_exact_linear_labels() {
    let d = tempfile::tempdir().unwrap();
    let path = d.path().join("linear.jsonl");
    let mut text = String::new();
    for i in 0..40i32 {
        // x = a/10, y = b/10 and w1 = c/100 exactly, so integer labels stay linear.
        let (a, b, c) = (i % 9 - 4, (i * 7) % 9 - 4, 1 + (i * 5) % 7);
        let (cx, cy) = (320.0 + 32.0 * a as f64, 240.0 + 24.0 * b as f64);
        let half = (3072.0 * c as f64).sqrt() / 2.0;
        let bx = [cx - half, cy - half, cx + half, cy + half];
        let (pan, tilt, zoom) = (3 * a, -2 * b, 100 + 10 * c);
        let w1 = c as f64 / 100.0;
        let line = serde_json::json!({
            "id": format!("l{i}"),
            "instruction": "look",
            "action": {"pan": pan, "tilt": tilt, "zoom": zoom},
            "tokens": "",
            "bbox_post": bx,
            "w1": w1,
            "w2": w1,
            "image_w": 640,
            "image_h": 480,
            "bbox_init": bx,
        });
        text.push_str(&line.to_string());
        text.push('\n');
    }
    fs::write(&path, text).unwrap();
    let out = ok(d.path(), &["fit", "--input", path.to_str().unwrap(), "--kind", "ols"]);
    assert!(out.contains("R2"), "{out}");
    let m: serde_json::Value = serde_json::from_slice(&fs::read(d.path().join("model.json")).unwrap()).unwrap();
    assert_eq!(m["format"], "ptzact-regressor");
    assert!(
        m["report"]["r2"]
            .as_array()
            .unwrap()
            .iter()
            .all(|r| r.as_f64().unwrap() > 1.0 - 1e-9),
        "{m}"
    );
    let expect = [[30.0, 0.0, 0.0], [0.0, -20.0, 0.0], [0.0, 0.0, 1000.0]];
    let bias = [0.0, 0.0, 100.0];
    for (h, head) in m["model"]["heads"].as_array().unwrap().iter().enumerate() {
        for (j, w) in head["weights"].as_array().unwrap().iter().enumerate() {
            assert!((w.as_f64().unwrap() - expect[h][j]).abs() < 1e-6, "{m}");
        }
        assert!((head["bias"].as_f64().unwrap() - bias[h]).abs() < 1e-6, "{m}");
    }
}

#[test]
fn synth_from_grounding_records() {
    let d = tempfile::tempdir().unwrap();
    let input = labels(d.path(), 200, 2, false);
    ok(d.path(), &["fit", "--input", &input, "--kind", "ols"]);
    let records = d.path().join("records.jsonl");
    let mut text = String::new();
    for i in 0..6 {
        let x = 100.0 + 60.0 * i as f64;
        let r = serde_json::json!({"id": format!("r{i}"), "image_w": 640, "image_h": 480,
            "bbox": [x, 150.0, x + 40.0, 190.0], "phrase": "red mug"});
        text.push_str(&r.to_string());
        text.push('\n');
    }
    text.push_str(
        &serde_json::json!({"id": "bad", "image_w": 640, "image_h": 480,
        "bbox": [10.0, 10.0, 10.0, 10.0], "phrase": "nothing"})
        .to_string(),
    );
    text.push('\n');
    fs::write(&records, text).unwrap();
    let model = d.path().join("model.json");
    let out = d.path().join("pseudo");
    let o = Command::new(env!("CARGO_BIN_EXE_ptzact"))
        .args([
            "--out",
            out.to_str().unwrap(),
            "synth",
            "--records",
            records.to_str().unwrap(),
        ])
        .args(["--model", model.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let labels = fs::read_to_string(out.join("labels.jsonl")).unwrap();
    assert_eq!(labels.lines().count(), 6);
    assert!(labels.contains("red mug"));
    assert_eq!(
        fs::read_to_string(out.join("skipped.jsonl")).unwrap().lines().count(),
        1
    );
}

#[test]
fn iterate_writes_reports_and_aborts_on_empty_filter() {
    let d = tempfile::tempdir().unwrap();
    let input = labels(d.path(), 400, 7, true);
    let out = ok(
        d.path(),
        &["iterate", "--input", &input, "--rounds", "2", "--thresholds", "0.5"],
    );
    assert!(out.contains("round 2"), "{out}");
    let rounds = fs::read_to_string(d.path().join("rounds.jsonl")).unwrap();
    assert_eq!(rounds.lines().count(), 2);
    assert!(d.path().join("refined.jsonl").exists());
    let report = ok(
        d.path(),
        &["report", "--input", d.path().join("rounds.jsonl").to_str().unwrap()],
    );
    assert!(report.starts_with("| round |"), "{report}");
    assert_eq!(report, fs::read_to_string(d.path().join("report.md")).unwrap());

    let e = tempfile::tempdir().unwrap();
    let o = ptzact(
        e.path(),
        &["iterate", "--input", &input, "--rounds", "2", "--thresholds", "1.0"],
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(!e.path().join("rounds.jsonl").exists());
    let o = ptzact(
        e.path(),
        &["iterate", "--input", &input, "--rounds", "3", "--thresholds", "0.5"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn grpo_train_then_eval_toy_checkpoint() {
    let d = tempfile::tempdir().unwrap();
    let input = labels(d.path(), 30, 1, false);
    ok(d.path(), &["grpo-train", "--input", &input, "--steps", "5"]);
    let log = fs::read_to_string(d.path().join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 5);
    let ckpt = d.path().join("policy.json");
    ok(
        d.path(),
        &[
            "eval",
            "--input",
            &input,
            "--policy",
            "toy",
            "--checkpoint",
            ckpt.to_str().unwrap(),
        ],
    );
    let report = ok(
        d.path(),
        &["report", "--input", d.path().join("train_log.jsonl").to_str().unwrap()],
    );
    assert!(report.starts_with("| step |"), "{report}");
}

#[test]
fn quiet_suppresses_summaries() {
    let d = tempfile::tempdir().unwrap();
    assert!(ok(d.path(), &["--quiet", "scene-gen", "--count", "3"]).is_empty());
    assert!(d.path().join("scene.jsonl").exists());
}

#[test]
fn config_file_sets_seed_and_cli_seed_overrides() {
    let a = tempfile::tempdir().unwrap();
    let cfg = a.path().join("run.toml");
    fs::write(&cfg, "seed = 21\n").unwrap();
    let c = cfg.to_str().unwrap();
    ok(a.path(), &["--config", c, "scene-gen", "--count", "5"]);
    let from_cfg = fs::read(a.path().join("scene.jsonl")).unwrap();
    ok(a.path(), &["--seed", "21", "scene-gen", "--count", "5"]);
    assert_eq!(from_cfg, fs::read(a.path().join("scene.jsonl")).unwrap());
    ok(a.path(), &["--config", c, "--seed", "22", "scene-gen", "--count", "5"]);
    assert_ne!(from_cfg, fs::read(a.path().join("scene.jsonl")).unwrap());
}
