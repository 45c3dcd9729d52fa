//! Phoneme inventory (shared special symbols, tonal pinyin initials/finals,
//! stress-collapsed ARPAbet), phoneme-string parsing and JSON-lines corpus
//! manifests.

mod inventory;
mod manifest;
mod phonemes;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use inventory::{
    build_inventory, default_inventory, PhonemeInventory, PhonemeSymbol, ENG_PHONES,
    INVENTORY_VERSION, MAN_FINALS, MAN_INITIALS, MAN_TONES, SPECIAL_SYMBOLS,
};
pub use manifest::{
    load_manifest, write_manifest, Manifest, ManifestEntry, ManifestStats, UtteranceRecord,
};
pub use phonemes::{classify, parse_phoneme_string, render_phonemes, ParsedPhonemes};

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown token {token:?} at position {position} in {language} scope")]
    UnknownToken {
        token: String,
        position: usize,
        language: Language,
    },
    #[error("empty phoneme string")]
    EmptyPhonemes,
    #[error("phoneme id {id} is outside the inventory of {size}")]
    InvalidId { id: usize, size: usize },
    #[error("manifest {path} line {line}: {detail}")]
    Manifest {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("manifest {manifest} references missing audio: {}", .files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingAudio {
        manifest: PathBuf,
        files: Vec<PathBuf>,
    },
    #[error("inventory parse error: {0}")]
    Inventory(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, FrontendError>;

/// Language of a single phoneme symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Language {
    Special,
    Man,
    Eng,
}

impl std::fmt::Display for Language {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Language::Special => "SPECIAL",
            Language::Man => "MAN",
            Language::Eng => "ENG",
        })
    }
}

/// Language of a whole utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum UtteranceLanguage {
    Man,
    Eng,
    Mix,
}

impl std::fmt::Display for UtteranceLanguage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UtteranceLanguage::Man => "MAN",
            UtteranceLanguage::Eng => "ENG",
            UtteranceLanguage::Mix => "MIX",
        })
    }
}
