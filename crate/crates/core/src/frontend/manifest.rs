use std::collections::{BTreeMap, HashSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsp::FeaturePair;

use super::phonemes::parse_phoneme_string;
use super::{FrontendError, PhonemeInventory, Result, UtteranceLanguage};

/// One manifest line as written on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub speaker: usize,
    pub phonemes: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<UtteranceLanguage>,
}

/// A validated training or synthesis example.
#[derive(Clone, Debug)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub speaker_id: usize,
    pub language: UtteranceLanguage,
    /// Inventory ids, terminated by EOS.
    pub phoneme_ids: Vec<usize>,
    /// Audio path resolved against the manifest's directory.
    pub audio: Option<PathBuf>,
    pub features: Option<FeaturePair>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ManifestStats {
    pub total: usize,
    pub per_speaker: BTreeMap<usize, usize>,
    pub per_language: BTreeMap<UtteranceLanguage, usize>,
}

impl ManifestStats {
    pub fn of(records: &[UtteranceRecord]) -> Self {
        let mut s = ManifestStats {
            total: records.len(),
            ..Default::default()
        };
        for r in records {
            *s.per_speaker.entry(r.speaker_id).or_default() += 1;
            *s.per_language.entry(r.language).or_default() += 1;
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct Manifest {
    pub path: PathBuf,
    pub records: Vec<UtteranceRecord>,
    pub stats: ManifestStats,
}

fn line_error(path: &Path, line: usize, detail: impl Into<String>) -> FrontendError {
    FrontendError::Manifest {
        path: path.to_path_buf(),
        line,
        detail: detail.into(),
    }
}

/// Loads and validates a JSON-lines manifest. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn load_manifest(path: impl AsRef<Path>, inv: &PhonemeInventory) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| FrontendError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut missing = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry =
            serde_json::from_str(line).map_err(|e| line_error(path, n, e.to_string()))?;
        if entry.id.is_empty() {
            return Err(line_error(path, n, "empty utterance id"));
        }
        if !seen.insert(entry.id.clone()) {
            return Err(line_error(
                path,
                n,
                format!("duplicate utterance id {:?}", entry.id),
            ));
        }
        let parsed = parse_phoneme_string(&entry.phonemes, inv)
            .map_err(|e| line_error(path, n, e.to_string()))?;
        if let Some(declared) = entry.language {
            if declared != parsed.language {
                return Err(line_error(
                    path,
                    n,
                    format!(
                        "declared language {declared} but phonemes are {}",
                        parsed.language
                    ),
                ));
            }
        }
        let audio = entry.audio.as_ref().map(|a| base.join(a));
        if let Some(a) = &audio {
            if !a.is_file() {
                missing.push(a.clone());
            }
        }
        records.push(UtteranceRecord {
            utterance_id: entry.id,
            speaker_id: entry.speaker,
            language: parsed.language,
            phoneme_ids: parsed.ids,
            audio,
            features: None,
        });
    }
    if !missing.is_empty() {
        return Err(FrontendError::MissingAudio {
            manifest: path.to_path_buf(),
            files: missing,
        });
    }
    if records.is_empty() {
        log::warn!("manifest {} is empty", path.display());
    }
    let stats = ManifestStats::of(&records);
    Ok(Manifest {
        path: path.to_path_buf(),
        records,
        stats,
    })
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let io = |source| FrontendError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for e in entries {
        let line = serde_json::to_string(e).expect("manifest entry serializes");
        writeln!(f, "{line}").map_err(io)?;
    }
    f.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::default_inventory;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let m = load_manifest(write(dir.path(), "m.jsonl", ""), &default_inventory()).unwrap();
        assert!(m.records.is_empty());
        assert_eq!(m.stats.total, 0);
    }

    #[test]
    fn per_speaker_counts() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"{"id":"a1","speaker":0,"phonemes":"ni3 hao3"}
{"id":"a2","speaker":0,"phonemes":"|ENG| HH AY"}
{"id":"b1","speaker":1,"phonemes":"ma1 |ENG| OW K EY"}
{"id":"b2","speaker":1,"phonemes":"hao3"}
"#;
        let m = load_manifest(write(dir.path(), "m.jsonl", text), &default_inventory()).unwrap();
        assert_eq!(m.stats.per_speaker, BTreeMap::from([(0, 2), (1, 2)]));
        assert_eq!(m.records[2].language, UtteranceLanguage::Mix);
        assert_eq!(m.stats.per_language[&UtteranceLanguage::Man], 2);
    }

    #[test]
    fn schema_violation_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let text = "{\"id\":\"a\",\"speaker\":0,\"phonemes\":\"a1\"}\n{\"id\":\"b\",\"phonemes\":\"a1\"}\n";
        match load_manifest(write(dir.path(), "m.jsonl", text), &default_inventory()) {
            Err(FrontendError::Manifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_audio_lists_every_file() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "here.wav", "x");
        let text = r#"{"id":"a","speaker":0,"phonemes":"a1","audio":"gone1.wav"}
{"id":"b","speaker":0,"phonemes":"a1","audio":"here.wav"}
{"id":"c","speaker":0,"phonemes":"a1","audio":"gone2.wav"}
"#;
        match load_manifest(write(dir.path(), "m.jsonl", text), &default_inventory()) {
            Err(FrontendError::MissingAudio { files, .. }) => {
                let names: Vec<_> = files
                    .iter()
                    .map(|f| f.file_name().unwrap().to_str().unwrap())
                    .collect();
                assert_eq!(names, ["gone1.wav", "gone2.wav"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn declared_language_must_match() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"{"id":"a","speaker":0,"phonemes":"a1","language":"ENG"}"#;
        assert!(matches!(
            load_manifest(write(dir.path(), "m.jsonl", text), &default_inventory()),
            Err(FrontendError::Manifest { line: 1, .. })
        ));
    }
}
