use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn polytts(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polytts"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn polytts")
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = polytts(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(stdout.lines().last().expect("summary line")).unwrap()
}

fn corpus(dir: &Path, speakers: &str, per_speaker: &str) {
    ok(
        dir,
        &[
            "--out-dir",
            "data",
            "generate",
            "--speakers",
            speakers,
            "--utterances-per-speaker",
            per_speaker,
            "--min-units",
            "1",
            "--max-units",
            "2",
        ],
    );
}

fn pooled_regime(dir: &Path, steps: &str) {
    corpus(dir, "1", "4");
    ok(
        dir,
        &[
            "--out-dir",
            "data",
            "features",
            "--manifest",
            "data/manifest.jsonl",
        ],
    );
    ok(
        dir,
        &[
            "--out-dir",
            "data",
            "regime",
            "--kind",
            "AVM_POOLED",
            "--placement",
            "NONE",
            "--avm",
            "data/manifest.jsonl",
            "--features-dir",
            "data/features",
            "--speakers",
            "1",
            "--steps",
            steps,
            "--batch-size",
            "2",
        ],
    );
}

#[test]
fn features_extracts_every_clip_then_hits_the_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    corpus(dir, "2", "5");
    let args = [
        "--out-dir",
        "data",
        "features",
        "--manifest",
        "data/manifest.jsonl",
    ];
    let first = polytts(dir, &args);
    assert!(first.status.success());
    let lines: Vec<Value> = String::from_utf8(first.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 10);
    assert!(lines.iter().all(|l| l["cached"] == false));
    let files: Vec<_> = std::fs::read_dir(dir.join("data/features"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(files.len(), 10);
    for f in &files {
        let cache = polytts_core::dsp::read_feature_file(f).unwrap();
        assert_eq!(cache.mel.shape()[1], 80);
        assert_eq!(cache.linear.shape()[1], 1025);
    }

    let again = polytts(dir, &args);
    assert!(again.status.success());
    let hits = String::from_utf8(again.stdout)
        .unwrap()
        .lines()
        .filter(|l| serde_json::from_str::<Value>(l).unwrap()["cached"] == true)
        .count();
    assert_eq!(hits, 10);
}

#[test]
fn features_on_an_empty_manifest_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("empty.jsonl"), "").unwrap();
    let out = polytts(dir, &["features", "--manifest", "empty.jsonl"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.stdout.is_empty());
    let cache = dir.join("out/features");
    assert!(!cache.exists() || std::fs::read_dir(cache).unwrap().next().is_none());
}

#[test]
fn deterministic_training_is_reproducible_and_replayable() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    pooled_regime(dir, "3");
    let train = |out: &str| {
        ok(
            dir,
            &[
                "--out-dir",
                out,
                "--deterministic",
                "train",
                "--regime-config",
                "data/regime.json",
            ],
        )
    };
    let a = train("a");
    let b = train("b");
    assert_eq!(a["hash"], b["hash"]);
    assert_eq!(a["steps"], 3);
    assert_eq!(
        std::fs::read(dir.join("a/train_log.jsonl")).unwrap(),
        std::fs::read(dir.join("b/train_log.jsonl")).unwrap()
    );

    let resolved: Value =
        serde_json::from_slice(&std::fs::read(dir.join("a/train.resolved.json")).unwrap()).unwrap();
    assert_eq!(resolved["command"], "train");
    assert!(resolved["version"].is_string());

    let c = ok(
        dir,
        &[
            "--out-dir",
            "c",
            "replay",
            "--resolved",
            "a/train.resolved.json",
        ],
    );
    assert_eq!(a["hash"], c["hash"]);
}

#[test]
fn synth_writes_audio_and_a_parseable_alignment_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    pooled_regime(dir, "1");
    ok(
        dir,
        &[
            "--out-dir",
            "run",
            "train",
            "--regime-config",
            "data/regime.json",
        ],
    );
    let s = ok(
        dir,
        &[
            "--out-dir",
            "s",
            "synth",
            "--checkpoint",
            "run/final.ptck",
            "--phonemes",
            "|MAN| b a1 WB |ENG| K AE T",
            "--gl-iters",
            "4",
        ],
    );
    let steps = s["decoder_steps"].as_u64().unwrap() as usize;
    assert!(steps > 0);
    let wav = std::fs::read(dir.join("s/synth.wav")).unwrap();
    assert_eq!(&wav[..4], b"RIFF");
    let svg = std::fs::read_to_string(dir.join("s/synth.alignment.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let cells = doc
        .descendants()
        .filter(|n| n.attribute("class") == Some("cell"))
        .count();
    assert_eq!(cells % steps, 0);
    assert!(cells > 0);
}

#[test]
fn synth_rejects_an_out_of_range_speaker() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    pooled_regime(dir, "0");
    ok(
        dir,
        &[
            "--out-dir",
            "run",
            "train",
            "--regime-config",
            "data/regime.json",
        ],
    );
    let out = polytts(
        dir,
        &[
            "synth",
            "--checkpoint",
            "run/final.ptck",
            "--phonemes",
            "|MAN| b a1",
            "--speaker",
            "5",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("speaker id 5 outside valid range 0..1"),
        "{err}"
    );
    assert!(!dir.join("out/synth.wav").exists());
}

#[test]
fn outputs_outside_the_out_dir_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    corpus(dir, "1", "1");
    let out = polytts(
        dir,
        &[
            "features",
            "--manifest",
            "data/manifest.jsonl",
            "--out",
            "../escaped",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().parent().unwrap().join("escaped").exists());
}

#[test]
fn unknown_flags_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = polytts(
        tmp.path(),
        &["features", "--manifest", "m.jsonl", "--bogus"],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bogus"));
}

#[test]
fn gradcheck_passes_the_default_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let s = ok(tmp.path(), &["gradcheck"]);
    assert_eq!(s["cells"], 9);
    assert_eq!(s["failed"], 0);
    let report: Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("out/gradcheck.json")).unwrap())
            .unwrap();
    assert_eq!(report.as_array().unwrap().len(), 9);
}

#[test]
fn analyze_writes_csv_svg_and_a_score() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    corpus(dir, "2", "6");
    ok(
        dir,
        &[
            "--out-dir",
            "data",
            "features",
            "--manifest",
            "data/manifest.jsonl",
        ],
    );
    ok(
        dir,
        &[
            "--out-dir",
            "data",
            "regime",
            "--kind",
            "AVM_SPK_EMB_INCLUDE_TARGET",
            "--avm",
            "data/manifest.jsonl",
            "--features-dir",
            "data/features",
            "--speakers",
            "2",
            "--steps",
            "1",
        ],
    );
    ok(
        dir,
        &[
            "--out-dir",
            "run",
            "train",
            "--regime-config",
            "data/regime.json",
        ],
    );
    let run = |out: &str| {
        ok(
            dir,
            &[
                "--out-dir",
                out,
                "--deterministic",
                "analyze",
                "--checkpoint",
                "run/final.ptck",
                "--manifest",
                "data/manifest.jsonl",
                "--source",
                "PHONEME_EMBEDDING",
                "--perplexity",
                "5",
                "--iters",
                "250",
            ],
        )
    };
    let a = run("a1");
    let score = a["separation_score"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&score));
    let csv = std::fs::read_to_string(dir.join("a1/analysis.csv")).unwrap();
    assert!(csv.starts_with("phoneme,language,d0"));
    assert_eq!(
        csv.lines().count() as u64,
        1 + a["points"].as_u64().unwrap()
    );
    roxmltree::Document::parse(&std::fs::read_to_string(dir.join("a1/analysis.svg")).unwrap())
        .unwrap();
    run("a2");
    for f in ["analysis.csv", "analysis.svg", "analysis.tsne.json"] {
        assert_eq!(
            std::fs::read(dir.join("a1").join(f)).unwrap(),
            std::fs::read(dir.join("a2").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn corpus_selects_target_speaker_utterances() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    corpus(dir, "2", "12");
    let out = polytts(
        dir,
        &[
            "--out-dir",
            "data",
            "corpus",
            "--source",
            "data/manifest.jsonl",
            "--language",
            "MIX",
            "--size",
            "2",
            "--target-speaker",
            "1",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let manifest = std::fs::read_to_string(dir.join("data/target.jsonl")).unwrap();
    let rows: Vec<Value> = manifest
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 2);
    assert!(rows
        .iter()
        .all(|r| r["speaker"] == 1 && r["language"] == "MIX"));
    assert!(dir.join("data/target.jsonl.provenance.json").exists());
}
