use std::path::{Path, PathBuf};

use crate::dsp::{read_feature_file, FeatureConfig, FeatureExtractor, FeaturePair, NormStats};
use crate::frontend::{load_manifest, parse_phoneme_string, PhonemeInventory, UtteranceLanguage};
use crate::synthetic::SyntheticUtterance;

use super::{Result, TrainingError};

/// Cache location of an utterance's features.
pub fn feature_path(dir: impl AsRef<Path>, utterance_id: &str) -> PathBuf {
    dir.as_ref().join(format!("{utterance_id}.ptfp"))
}

/// A manifest record joined with its (unnormalized) features.
#[derive(Clone, Debug)]
pub struct Example {
    pub utterance_id: String,
    pub speaker: usize,
    pub language: UtteranceLanguage,
    pub ids: Vec<usize>,
    pub features: FeaturePair,
}

pub fn load_examples(
    manifest: &Path,
    features_dir: &Path,
    inv: &PhonemeInventory,
) -> Result<Vec<Example>> {
    let m = load_manifest(manifest, inv)?;
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(m.records.len());
    for r in m.records {
        let path = feature_path(features_dir, &r.utterance_id);
        if !path.is_file() {
            missing.push(r.utterance_id);
            continue;
        }
        out.push(Example {
            features: read_feature_file(&path)?,
            utterance_id: r.utterance_id,
            speaker: r.speaker_id,
            language: r.language,
            ids: r.phoneme_ids,
        });
    }
    if !missing.is_empty() {
        return Err(TrainingError::Data(format!(
            "no cached features in {} for: {}",
            features_dir.display(),
            missing.join(", ")
        )));
    }
    Ok(out)
}

/// Extracts features in memory for generated utterances.
pub fn examples_from_synthetic(
    utts: &[SyntheticUtterance],
    inv: &PhonemeInventory,
) -> Result<Vec<Example>> {
    let fx = FeatureExtractor::new(FeatureConfig::default())?;
    utts.iter()
        .map(|u| {
            let parsed = parse_phoneme_string(&u.entry.phonemes, inv)?;
            Ok(Example {
                utterance_id: u.entry.id.clone(),
                speaker: u.entry.speaker,
                language: parsed.language,
                ids: parsed.ids,
                features: fx.extract(&u.clip)?,
            })
        })
        .collect()
}

/// Examples of one regime, split into AVM and target-speaker sets.
#[derive(Clone, Debug, Default)]
pub struct RegimeData {
    pub avm: Vec<Example>,
    pub target: Vec<Example>,
}

impl RegimeData {
    pub fn load(regime: &super::TrainingRegime, inv: &PhonemeInventory) -> Result<Self> {
        let mut avm = Vec::new();
        for m in &regime.avm_manifests {
            avm.extend(load_examples(m, &regime.features_dir, inv)?);
        }
        let target = match &regime.target_manifest {
            Some(m) => load_examples(m, &regime.features_dir, inv)?,
            None => Vec::new(),
        };
        Ok(RegimeData { avm, target })
    }

    /// Min-max statistics over every example of the regime.
    pub fn norm_stats(&self) -> Result<NormStats> {
        Ok(NormStats::fit(
            self.avm.iter().chain(&self.target).map(|e| &e.features),
        )?)
    }
}
