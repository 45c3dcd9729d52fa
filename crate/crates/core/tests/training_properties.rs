mod common;

use polytts_core::frontend::{default_inventory, write_manifest, ManifestEntry, UtteranceLanguage};
use polytts_core::model::{AttentionVariant, Checkpoint, Model, ParamGroup, SpeakerPlacement};
use polytts_core::training::{
    build_corpus_regime, train_with, CorpusProvenance, CorpusSelection, Regime, RegimeData,
    TrainOptions, TrainingError,
};

fn retrain_data() -> RegimeData {
    let all = common::synthetic_examples(2, 3, 11);
    let (target, avm) = all.into_iter().partition(|e| e.speaker == 1);
    RegimeData { avm, target }
}

#[test]
fn zero_steps_returns_the_initialization() {
    let cfg = common::toy_model(AttentionVariant::Pecv, SpeakerPlacement::SeDec);
    let r = common::regime(Regime::AvmSpkEmbIncludeTarget, cfg.clone(), 0);
    let out = train_with::<f32>(&r, &retrain_data(), &TrainOptions::default()).unwrap();
    let init = Checkpoint::from_model(&Model::<f32>::new(cfg).unwrap(), Some(out.norm));
    assert_eq!(out.checkpoint.hash(), init.hash());
    assert_eq!(out.log.steps().count(), 0);
}

#[test]
fn two_hundred_steps_halve_the_loss() {
    let mut r = common::regime(
        Regime::AvmSpkEmbIncludeTarget,
        common::toy_model(AttentionVariant::Base, SpeakerPlacement::SeDec),
        200,
    );
    r.target_speaker = 0;
    let data = RegimeData {
        avm: common::synthetic_examples(1, 5, 0),
        target: Vec::new(),
    };
    let out = train_with::<f32>(&r, &data, &TrainOptions::default()).unwrap();
    let losses: Vec<f64> = out.log.steps().map(|s| s.loss).collect();
    assert_eq!(losses.len(), 200);
    assert!(
        losses[199] < 0.5 * losses[0],
        "initial {} final {}",
        losses[0],
        losses[199]
    );
}

#[test]
fn retrain_freezes_encoder_and_isolates_target_row() {
    let cfg = common::toy_model(AttentionVariant::Pecv, SpeakerPlacement::SeDec);
    let r = common::regime(Regime::AvmExcludeThenRetrain, cfg, 12);
    let out = train_with::<f32>(&r, &retrain_data(), &TrainOptions::default()).unwrap();
    assert_eq!(out.phase_checkpoints.len(), 2);
    let (p1, p2) = (
        &out.phase_checkpoints[0].params,
        &out.phase_checkpoints[1].params,
    );
    let mut frozen = 0;
    let mut moved = 0;
    for (id, name, t) in p1.iter() {
        let after = p2.get(id);
        match ParamGroup::of(name).unwrap() {
            ParamGroup::PhonemeEmbedding | ParamGroup::Encoder => {
                assert_eq!(t, after, "{name} changed in phase 2");
                frozen += 1;
            }
            _ => moved += usize::from(t != after),
        }
    }
    assert!(frozen > 0 && moved > 0);

    let phase1: Vec<_> = out.log.steps().filter(|s| s.phase == 1).collect();
    assert_eq!(phase1.len(), 12);
    assert!(phase1
        .iter()
        .all(|s| s.target_speaker_grad_norm == Some(0.0)));
    let init = Model::<f32>::new(r.effective_model()).unwrap();
    let table = init.params().by_name("speaker_table").unwrap();
    let row = |t: &polytts_core::tensor::Tensor<f32>| t.data()[4..8].to_vec();
    assert_eq!(row(p1.by_name("speaker_table").unwrap()), row(table));

    let ckpts: Vec<_> = out.log.checkpoints().collect();
    assert_eq!(ckpts.len(), 3);
    for w in ckpts.windows(2) {
        assert_eq!(w[1].parent.as_deref(), Some(w[0].hash.as_str()));
    }
    let steps: Vec<usize> = out.log.steps().map(|s| s.step).collect();
    assert!(steps.windows(2).all(|w| w[1] == w[0] + 1));
}

#[test]
fn target_speaker_in_exclusion_data_is_rejected() {
    let cfg = common::toy_model(AttentionVariant::Base, SpeakerPlacement::SeEnc);
    let r = common::regime(Regime::AvmExcludeThenRetrain, cfg, 5);
    let mut data = retrain_data();
    data.avm.push(data.target[0].clone());
    let err = train_with::<f32>(&r, &data, &TrainOptions::default()).unwrap_err();
    assert!(matches!(err, TrainingError::Config(_)), "{err}");
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let cfg = common::toy_model(AttentionVariant::Res, SpeakerPlacement::SeEnc);
    let mut r = common::regime(Regime::AvmSpkEmbIncludeTarget, cfg, 6);
    r.model.prenet_dropout = 0.5;
    r.schedule.batch_size = 4;
    let data = retrain_data();
    let run = |threads| {
        let opts = TrainOptions {
            threads: Some(threads),
            ..Default::default()
        };
        let out = train_with::<f32>(&r, &data, &opts).unwrap();
        (out.checkpoint.to_bytes(), out.log.to_jsonl())
    };
    let a = run(1);
    let b = run(3);
    assert!(a.0 == b.0, "checkpoints differ");
    assert_eq!(a.1, b.1);
}

#[test]
fn checkpoints_written_with_lineage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::toy_model(AttentionVariant::Base, SpeakerPlacement::SeDec);
    let mut r = common::regime(Regime::AvmSpkEmbIncludeTarget, cfg, 4);
    r.schedule.checkpoint_every = Some(2);
    let opts = TrainOptions {
        out_dir: Some(dir.path().to_path_buf()),
        threads: None,
    };
    let out = train_with::<f32>(&r, &retrain_data(), &opts).unwrap();
    let records: Vec<_> = out.log.checkpoints().collect();
    assert_eq!(records.len(), 3);
    for rec in &records[1..] {
        let path = dir.path().join(rec.path.as_ref().unwrap());
        assert_eq!(&Checkpoint::load(path).unwrap().hash(), &rec.hash);
    }
    assert!(dir.path().join("step2.ptck").is_file());
    assert!(dir.path().join("phase1.ptck").is_file());
}

fn corpus_manifest(dir: &std::path::Path) -> std::path::PathBuf {
    let mut entries = Vec::new();
    for i in 0..6 {
        entries.push(ManifestEntry {
            id: format!("man{i}"),
            speaker: 1,
            phonemes: "n i3 h ao3".into(),
            audio: None,
            language: None,
        });
    }
    for i in 0..2 {
        entries.push(ManifestEntry {
            id: format!("eng{i}"),
            speaker: 1,
            phonemes: "|ENG| HH AH L OW".into(),
            audio: None,
            language: None,
        });
    }
    entries.push(ManifestEntry {
        id: "other".into(),
        speaker: 0,
        phonemes: "n i3".into(),
        audio: None,
        language: None,
    });
    let path = dir.join("source.jsonl");
    write_manifest(&path, &entries).unwrap();
    path
}

#[test]
fn corpus_selection_is_seeded_and_language_filtered() {
    let dir = tempfile::tempdir().unwrap();
    let src = corpus_manifest(dir.path());
    let inv = default_inventory();
    let sel = CorpusSelection {
        language: UtteranceLanguage::Man,
        size: 4,
        target_speaker: 1,
        seed: 5,
    };
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let pa = build_corpus_regime(std::slice::from_ref(&src), &sel, &a, &inv).unwrap();
    let pb = build_corpus_regime(std::slice::from_ref(&src), &sel, &b, &inv).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(pa.utterance_ids, pb.utterance_ids);
    assert_eq!(pa.available, 6);
    assert!(pa.utterance_ids.iter().all(|id| id.starts_with("man")));
    assert!(CorpusProvenance::path_for(&a).is_file());

    let empty = dir.path().join("empty.jsonl");
    let p0 =
        build_corpus_regime(&[src], &CorpusSelection { size: 0, ..sel }, &empty, &inv).unwrap();
    assert!(p0.utterance_ids.is_empty());
    assert!(std::fs::read_to_string(&empty).unwrap().trim().is_empty());
}

#[test]
fn insufficient_utterances_reports_the_available_count() {
    let dir = tempfile::tempdir().unwrap();
    let src = corpus_manifest(dir.path());
    let sel = CorpusSelection {
        language: UtteranceLanguage::Eng,
        size: 3,
        target_speaker: 1,
        seed: 0,
    };
    let err = build_corpus_regime(
        &[src],
        &sel,
        &dir.path().join("x.jsonl"),
        &default_inventory(),
    )
    .unwrap_err();
    assert!(matches!(
        err,
        TrainingError::InsufficientUtterances { available: 2, .. }
    ));
    assert!(err.to_string().contains("only 2 are available"), "{err}");
}
