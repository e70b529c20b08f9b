use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sercross::synth::{derive_shifted_corpus, SynthCorpusSpec};

fn sercross(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sercross"))
        .args(args)
        .env("SERCROSS_OUT", out_root)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> PathBuf {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path.to_path_buf()
}

fn tiny(name: &str) -> SynthCorpusSpec {
    SynthCorpusSpec {
        name: name.into(),
        utterances_per_class_per_speaker: 2,
        duration_range: (0.8, 1.0),
        ..SynthCorpusSpec::reference()
    }
}

fn synth(spec: &SynthCorpusSpec, dir: &Path) -> PathBuf {
    let spec_file = write_json(&dir.join(format!("{}.json", spec.name)), spec);
    let out = dir.join("data").join(&spec.name);
    PathBuf::from(ok(&sercross(&["synth", "--spec", s(&spec_file), "--out", s(&out)], dir)).trim())
}

#[test]
fn synth_reference_and_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let spec = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/synth/reference.json");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&sercross(&["synth", "--spec", spec, "--out", s(&a)], dir.path()));
    ok(&sercross(&["synth", "--spec", spec, "--out", s(&b)], dir.path()));
    assert_eq!(std::fs::read_dir(a.join("wav")).unwrap().count(), 80);
    for f in ["manifest.jsonl", "spec.json", "wav/synthA_a00_angry_00.wav", "wav/synthA_a01_neutral_09.wav"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    // default output location comes from the environment
    let printed = ok(&sercross(&["synth", "--spec", spec], dir.path()));
    assert_eq!(PathBuf::from(printed.trim()), dir.path().join("corpora/reference/manifest.jsonl"));
}

#[test]
fn bad_inputs_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_json(
        &dir.path().join("bad.json"),
        &SynthCorpusSpec {
            duration_range: (0.1, 1.0),
            ..SynthCorpusSpec::reference()
        },
    );
    let o = sercross(&["synth", "--spec", s(&bad)], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("duration_range"), "{}", stderr(&o));

    let o = sercross(&["synth", "--spec", s(&dir.path().join("missing.json"))], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let manifest = synth(&tiny("t"), dir.path());
    let o = sercross(&["prepare", "--manifest", s(&manifest), "--strategy", "random-split"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    for name in ["speaker-rotation", "session-holdout", "proportional", "split-80-20"] {
        assert!(stderr(&o).contains(name), "{}", stderr(&o));
    }
    let o = sercross(&["augment", "--manifest", s(&manifest), "--recipe", "9vars"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("7vars"));

    let o = sercross(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_json(&dir.path().join("t.json"), &tiny("t"));
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"not a directory").unwrap();
    let o = sercross(&["synth", "--spec", s(&spec), "--out", s(&blocker.join("x"))], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn prepare_writes_plan() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&tiny("t"), dir.path());
    let out = dir.path().join("prep");
    let plan = ok(&sercross(
        &[
            "prepare",
            "--manifest",
            s(&manifest),
            "--strategy",
            r#"{"kind": "speaker-rotation", "n_folds": 2, "test_speakers": 1}"#,
            "--out",
            s(&out),
        ],
        dir.path(),
    ));
    let plan: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(plan.trim()).unwrap()).unwrap();
    assert_eq!(plan["folds"].as_array().unwrap().len(), 2);
    assert!(out.join("manifest.jsonl").exists() && out.join("discarded.csv").exists());
}

#[test]
fn augment_multiplies_records() {
    let dir = tempfile::tempdir().unwrap();
    let full = synth(&tiny("t"), dir.path());
    // ten records beside the originals so relative audio paths still resolve
    let text = std::fs::read_to_string(&full).unwrap();
    let ten: Vec<&str> = text.lines().take(11).collect();
    let small = full.with_file_name("ten.jsonl");
    std::fs::write(&small, ten.join("\n") + "\n").unwrap();

    for (recipe, factor) in [("speed", 2), ("7vars", 8)] {
        let out = dir.path().join(recipe);
        let m = ok(&sercross(&["augment", "--manifest", s(&small), "--recipe", recipe, "--seed", "3", "--out", s(&out)], dir.path()));
        let records = std::fs::read_to_string(m.trim()).unwrap().lines().count() - 1;
        assert_eq!(records, 10 * factor, "{recipe}");
    }
}

/// One small end-to-end experiment shared by the train/eval checks.
fn tiny_experiment(dir: &Path, epochs: usize) -> (PathBuf, PathBuf, PathBuf) {
    let a = synth(&tiny("tA"), dir);
    let b = synth(&derive_shifted_corpus(&tiny("tB"), 0.3, None), dir);
    let config = serde_json::json!({
        "name": "tA",
        "profile": "desk-scale",
        "train": {"epochs": epochs, "validation_fraction": 0.2, "seed": 5},
        "train_corpora": [{"manifest": a, "folds": {"kind": "split-80-20"}}],
        "test_corpora": [{"manifest": b}],
    });
    (write_json(&dir.join("exp.json"), &config), a, b)
}

#[test]
fn train_eval_report_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (config, _, b) = tiny_experiment(dir.path(), 2);
    let run = PathBuf::from(ok(&sercross(&["train", "--config", s(&config)], dir.path())).trim());
    assert_eq!(run, dir.path().join("tA"));

    let resolved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(resolved["profile"]["train"]["epochs"], 2);
    assert_eq!(resolved["profile"]["train"]["seed"], 5);
    let fold = run.join("fold0");
    for f in ["history.jsonl", "best.ckpt", "last.ckpt", "optimizer.bin", "state.json"] {
        assert!(fold.join(f).exists(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(fold.join("history.jsonl")).unwrap().lines().count(), 2);
    for test in ["tA", "tB-shifted"] {
        for f in ["predictions.csv", "evaluation.json", "result.json"] {
            assert!(fold.join("eval").join(test).join(f).exists(), "{test}/{f}");
        }
    }

    // resume after a simulated interruption at the first epoch boundary
    let state_path = fold.join("state.json");
    let mut state: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&state_path).unwrap()).unwrap();
    state["epochs_done"] = 1.into();
    std::fs::write(&state_path, state.to_string()).unwrap();
    ok(&sercross(&["train", "--config", s(&config), "--resume"], dir.path()));
    let history = std::fs::read_to_string(fold.join("history.jsonl")).unwrap();
    let epochs: Vec<u64> = history
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["epoch"].as_u64().unwrap())
        .collect();
    assert_eq!(epochs, vec![0, 1]);

    // one checkpoint on two test sets, one of them three-class
    let three = synth(
        &SynthCorpusSpec {
            n_classes: 3,
            ..tiny("tC")
        },
        dir.path(),
    );
    let out = dir.path().join("eval");
    let printed = ok(&sercross(
        &[
            "eval",
            "--checkpoint",
            s(&fold.join("best.ckpt")),
            "--test",
            s(&b),
            "--test",
            s(&three),
            "--restrict-classes",
            "--out",
            s(&out),
        ],
        dir.path(),
    ));
    assert_eq!(printed.lines().count(), 2);
    let ev: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("tC/evaluation.json")).unwrap()).unwrap();
    assert_eq!(ev["restricted_classes"], true);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("tC/result.json")).unwrap()).unwrap();
    assert_eq!(r["model"], "tA");

    let o = sercross(&["eval", "--checkpoint", s(&fold.join("nope.ckpt")), "--test", s(&b)], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let table = ok(&sercross(&["report", s(&run), "--out", s(&dir.path().join("report"))], dir.path()));
    assert!(table.contains("*"), "{table}");
    assert!(dir.path().join("report/report.json").exists());
}

#[test]
fn train_refuses_leakage_and_bad_resume() {
    let dir = tempfile::tempdir().unwrap();
    let (config, a, _) = tiny_experiment(dir.path(), 1);
    let leaky = serde_json::json!({
        "name": "leaky",
        "train": {"epochs": 1},
        "train_corpora": [{"manifest": a, "folds": {"kind": "split-80-20"}}],
        "test_corpora": [{"manifest": a}],
    });
    let leaky = write_json(&dir.path().join("leaky.json"), &leaky);
    let o = sercross(&["train", "--config", s(&leaky)], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!dir.path().join("leaky/fold0").exists());

    ok(&sercross(&["train", "--config", s(&config)], dir.path()));
    let mut changed: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&config).unwrap()).unwrap();
    changed["train"]["epochs"] = 3.into();
    write_json(&config, &changed);
    let o = sercross(&["train", "--config", s(&config), "--resume"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("resume"), "{}", stderr(&o));
}

fn result(dir: &Path, model: &str, test: &str, fold: usize, ua: f64) {
    let d = dir.join(model).join(format!("fold{fold}")).join("eval").join(test);
    std::fs::create_dir_all(&d).unwrap();
    let r = serde_json::json!({
        "model": model, "test": test, "fold": fold,
        "metrics": {"ua": ua, "wa": ua, "mean_class_recall": ua, "overall_accuracy": ua},
    });
    write_json(&d.join("result.json"), &r);
}

#[test]
fn report_grid_is_complete_flagged_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    for (m, t, k, ua) in [
        ("X", "X", 0, 90.0),
        ("X", "X", 1, 80.0),
        ("X", "Y", 0, 60.0),
        ("X", "Y", 1, 50.0),
        ("Y", "X", 0, 55.0),
        ("Y", "X", 1, 65.0),
        ("Y", "Y", 0, 85.0),
        ("Y", "Y", 1, 95.0),
    ] {
        result(&runs, m, t, k, ua);
    }
    let args = |out: &Path| {
        vec![
            "report".to_string(),
            runs.to_string_lossy().into_owned(),
            "--expected-folds".into(),
            "2".into(),
            "--out".into(),
            out.to_string_lossy().into_owned(),
        ]
    };
    let run = |out: &Path| {
        let a = args(out);
        let a: Vec<&str> = a.iter().map(String::as_str).collect();
        ok(&sercross(&a, dir.path()))
    };
    let first = run(&dir.path().join("r1"));
    run(&dir.path().join("r2"));
    for f in ["report.json", "report.csv", "report.txt"] {
        assert_eq!(
            std::fs::read(dir.path().join("r1").join(f)).unwrap(),
            std::fs::read(dir.path().join("r2").join(f)).unwrap(),
            "{f}"
        );
    }
    assert!(first.contains("*85.0 (5.0)*"), "{first}");
    assert!(first.contains("60.0 (5.0)"), "{first}");
    assert!(!first.contains("/2]"), "{first}");

    std::fs::remove_file(runs.join("Y/fold1/eval/X/result.json")).unwrap();
    let flagged = run(&dir.path().join("r3"));
    assert!(flagged.contains("[1/2]"), "{flagged}");
}
