#![allow(dead_code)]

use std::path::PathBuf;

use polytts_core::frontend::default_inventory;
use polytts_core::model::{AttentionVariant, ModelConfig, SpeakerPlacement};
use polytts_core::synthetic::{generate_corpus, SyntheticConfig};
use polytts_core::training::{
    examples_from_synthetic, Example, Regime, Schedule, TrainingRegime, REGIME_SCHEMA_VERSION,
};

/// Small model on full-size 80/1025 features.
pub fn toy_model(variant: AttentionVariant, placement: SpeakerPlacement) -> ModelConfig {
    ModelConfig {
        embedding_dim: 16,
        encoder_dim: 16,
        decoder_dim: 32,
        attention_dim: 16,
        speaker_count: 2,
        speaker_dim: 4,
        attention_variant: variant,
        speaker_placement: placement,
        reduction_factor: 2,
        prenet_dims: vec![32, 16],
        prenet_dropout: 0.0,
        postnet_dim: 16,
        max_decoder_steps: 200,
        ..ModelConfig::default()
    }
}

/// `per_speaker` short utterances from each of `speakers` synthetic speakers.
pub fn synthetic_examples(speakers: usize, per_speaker: usize, seed: u64) -> Vec<Example> {
    let cfg = SyntheticConfig {
        speakers,
        utterances_per_speaker: per_speaker,
        seed,
        min_units: 1,
        max_units: 2,
        ..SyntheticConfig::default()
    };
    let inv = default_inventory();
    let utts = generate_corpus(&cfg, &inv).unwrap();
    examples_from_synthetic(&utts, &inv).unwrap()
}

pub fn regime(kind: Regime, model: ModelConfig, steps: usize) -> TrainingRegime {
    TrainingRegime {
        schema_version: REGIME_SCHEMA_VERSION,
        regime: kind,
        target_speaker: 1,
        avm_manifests: vec![PathBuf::from("avm.jsonl")],
        target_manifest: Some(PathBuf::from("target.jsonl")),
        features_dir: PathBuf::from("features"),
        model,
        schedule: Schedule {
            steps,
            learning_rate: 3e-3,
            lr_half_life: None,
            batch_size: 5,
            verify_frozen_each_step: true,
            ..Schedule::default()
        },
        retrain_schedule: None,
        freeze: None,
    }
}
