use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::frontend::{
    load_manifest, write_manifest, ManifestEntry, PhonemeInventory, UtteranceLanguage,
};

use super::{Result, TrainingError};

/// Which target-speaker utterances to draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSelection {
    pub language: UtteranceLanguage,
    pub size: usize,
    pub target_speaker: usize,
    pub seed: u64,
}

/// Sidecar written next to a selected manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusProvenance {
    pub selection: CorpusSelection,
    pub sources: Vec<PathBuf>,
    pub available: usize,
    pub manifest: PathBuf,
    pub utterance_ids: Vec<String>,
}

impl CorpusProvenance {
    pub fn path_for(manifest: &Path) -> PathBuf {
        let mut s = manifest.as_os_str().to_owned();
        s.push(".provenance.json");
        PathBuf::from(s)
    }
}

fn raw_entries(path: &Path) -> Result<HashMap<String, ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| TrainingError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let e: ManifestEntry = serde_json::from_str(l)
                .map_err(|e| TrainingError::Data(format!("{}: {e}", path.display())))?;
            Ok((e.id.clone(), e))
        })
        .collect()
}

/// Seeded subset of the target speaker's utterances of one language, written
/// as a manifest at `out` with a provenance sidecar. Selected lines keep
/// their source order; audio paths are made absolute.
pub fn build_corpus_regime(
    sources: &[PathBuf],
    selection: &CorpusSelection,
    out: &Path,
    inv: &PhonemeInventory,
) -> Result<CorpusProvenance> {
    let mut candidates = Vec::new();
    for src in sources {
        let manifest = load_manifest(src, inv)?;
        let raw = raw_entries(src)?;
        for r in manifest.records {
            if r.speaker_id != selection.target_speaker || r.language != selection.language {
                continue;
            }
            let mut entry = raw[&r.utterance_id].clone();
            entry.audio = r.audio.map(|a| {
                std::path::absolute(&a)
                    .unwrap_or(a)
                    .to_string_lossy()
                    .into_owned()
            });
            entry.language = Some(r.language);
            candidates.push(entry);
        }
    }
    let available = candidates.len();
    if selection.size > available {
        return Err(TrainingError::InsufficientUtterances {
            language: selection.language,
            requested: selection.size,
            available,
        });
    }
    let mut picks: Vec<usize> = (0..available).collect();
    picks.shuffle(&mut ChaCha8Rng::seed_from_u64(selection.seed));
    picks.truncate(selection.size);
    picks.sort_unstable();
    let chosen: Vec<ManifestEntry> = picks.into_iter().map(|i| candidates[i].clone()).collect();
    if chosen.is_empty() {
        log::warn!("empty target-speaker selection; training will use AVM data only");
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| TrainingError::io(dir, e))?;
    }
    write_manifest(out, &chosen)?;
    let provenance = CorpusProvenance {
        selection: selection.clone(),
        sources: sources
            .iter()
            .map(|s| std::path::absolute(s).unwrap_or_else(|_| s.clone()))
            .collect(),
        available,
        manifest: std::path::absolute(out).unwrap_or_else(|_| out.to_path_buf()),
        utterance_ids: chosen.into_iter().map(|e| e.id).collect(),
    };
    let side = CorpusProvenance::path_for(out);
    let json = serde_json::to_string_pretty(&provenance).expect("provenance serializes");
    std::fs::write(&side, json + "\n").map_err(|e| TrainingError::io(&side, e))?;
    Ok(provenance)
}
