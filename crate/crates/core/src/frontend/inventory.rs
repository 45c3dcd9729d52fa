use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{FrontendError, Language, Result};

pub const INVENTORY_VERSION: u32 = 1;

/// Language-neutral symbols, always ids 0..4 in this order.
pub const SPECIAL_SYMBOLS: [&str; 4] = ["PAD", "EOS", "SIL", "WB"];
pub const PAD: usize = 0;
pub const EOS: usize = 1;

pub const MAN_INITIALS: [&str; 23] = [
    "b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j", "q", "x", "zh", "ch", "sh", "r",
    "z", "c", "s", "y", "w",
];

/// Pinyin finals; `v` stands for ü.
pub const MAN_FINALS: [&str; 36] = [
    "a", "o", "e", "ai", "ei", "ao", "ou", "an", "en", "ang", "eng", "ong", "er", "i", "ia", "ie",
    "iao", "iu", "ian", "in", "iang", "ing", "iong", "u", "ua", "uo", "uai", "ui", "uan", "un",
    "uang", "ueng", "v", "ve", "van", "vn",
];

/// Tones 1-4 plus 5 for the neutral tone; carried on the final.
pub const MAN_TONES: [u8; 5] = [1, 2, 3, 4, 5];

pub const ENG_PHONES: [&str; 39] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH",
    "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH",
    "UW", "V", "W", "Y", "Z", "ZH",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhonemeSymbol {
    pub id: usize,
    pub label: String,
    pub language: Language,
}

#[derive(Serialize, Deserialize)]
struct InventoryFile {
    version: u32,
    symbols: Vec<PhonemeSymbol>,
}

/// Dense id space: special block, then sorted Mandarin, then sorted English.
#[derive(Clone, Debug, PartialEq)]
pub struct PhonemeInventory {
    symbols: Vec<PhonemeSymbol>,
    index: HashMap<(Language, String), usize>,
}

pub fn build_inventory(man: &[String], eng: &[String]) -> Result<PhonemeInventory> {
    let mut symbols: Vec<(Language, String)> = SPECIAL_SYMBOLS
        .iter()
        .map(|s| (Language::Special, s.to_string()))
        .collect();
    for (lang, list) in [(Language::Man, man), (Language::Eng, eng)] {
        let mut seen = HashSet::new();
        for label in list {
            if label.is_empty() || label.chars().any(char::is_whitespace) || label.starts_with('|')
            {
                return Err(FrontendError::Config(format!(
                    "invalid {lang} label {label:?}"
                )));
            }
            if SPECIAL_SYMBOLS.contains(&label.as_str()) {
                return Err(FrontendError::Config(format!(
                    "{lang} label {label:?} collides with a special symbol"
                )));
            }
            if !seen.insert(label) {
                return Err(FrontendError::Config(format!(
                    "duplicate {lang} label {label:?}"
                )));
            }
        }
        let mut sorted: Vec<&String> = list.iter().collect();
        sorted.sort();
        symbols.extend(sorted.into_iter().map(|l| (lang, l.clone())));
    }
    Ok(PhonemeInventory::from_pairs(symbols))
}

/// 4 special + 23 initials + 36 finals × 5 tones + 39 ARPAbet = 246 symbols.
pub fn default_inventory() -> PhonemeInventory {
    let mut man: Vec<String> = MAN_INITIALS.iter().map(|s| s.to_string()).collect();
    for f in MAN_FINALS {
        for t in MAN_TONES {
            man.push(format!("{f}{t}"));
        }
    }
    let eng: Vec<String> = ENG_PHONES.iter().map(|s| s.to_string()).collect();
    build_inventory(&man, &eng).expect("shipped phone tables are valid")
}

impl PhonemeInventory {
    fn from_pairs(pairs: Vec<(Language, String)>) -> Self {
        let symbols: Vec<PhonemeSymbol> = pairs
            .into_iter()
            .enumerate()
            .map(|(id, (language, label))| PhonemeSymbol {
                id,
                label,
                language,
            })
            .collect();
        let index = symbols
            .iter()
            .map(|s| ((s.language, s.label.clone()), s.id))
            .collect();
        PhonemeInventory { symbols, index }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[PhonemeSymbol] {
        &self.symbols
    }

    pub fn symbol(&self, id: usize) -> Option<&PhonemeSymbol> {
        self.symbols.get(id)
    }

    pub fn id(&self, language: Language, label: &str) -> Option<usize> {
        self.index.get(&(language, label.to_string())).copied()
    }

    pub fn language_of(&self, id: usize) -> Option<Language> {
        self.symbols.get(id).map(|s| s.language)
    }

    pub fn pad(&self) -> usize {
        PAD
    }

    pub fn eos(&self) -> usize {
        EOS
    }

    pub fn count(&self, language: Language) -> usize {
        self.symbols
            .iter()
            .filter(|s| s.language == language)
            .count()
    }

    /// Pretty JSON with a trailing newline; stable across runs.
    pub fn to_json(&self) -> String {
        let file = InventoryFile {
            version: INVENTORY_VERSION,
            symbols: self.symbols.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("inventory serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: InventoryFile =
            serde_json::from_str(text).map_err(|e| FrontendError::Inventory(e.to_string()))?;
        if file.version != INVENTORY_VERSION {
            return Err(FrontendError::Inventory(format!(
                "unsupported version {}",
                file.version
            )));
        }
        for (i, (s, want)) in file.symbols.iter().zip(SPECIAL_SYMBOLS).enumerate() {
            if s.language != Language::Special || s.label != want {
                return Err(FrontendError::Inventory(format!(
                    "id {i} must be special symbol {want}"
                )));
            }
        }
        if file.symbols.len() < SPECIAL_SYMBOLS.len() {
            return Err(FrontendError::Inventory("missing special symbols".into()));
        }
        let mut seen = HashSet::new();
        for (i, s) in file.symbols.iter().enumerate() {
            if s.id != i {
                return Err(FrontendError::Inventory(format!(
                    "symbol {:?} has id {}, expected {i}",
                    s.label, s.id
                )));
            }
            if !seen.insert((s.language, s.label.clone())) {
                return Err(FrontendError::Inventory(format!(
                    "duplicate symbol {} {:?}",
                    s.language, s.label
                )));
            }
        }
        Ok(PhonemeInventory::from_pairs(
            file.symbols
                .into_iter()
                .map(|s| (s.language, s.label))
                .collect(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_inventory_size() {
        let inv = default_inventory();
        assert_eq!(inv.count(Language::Special), 4);
        assert_eq!(inv.count(Language::Man), 23 + 36 * 5);
        assert_eq!(inv.count(Language::Eng), 39);
        assert_eq!(inv.len(), 246);
    }

    #[test]
    fn empty_english_gives_special_and_mandarin_only() {
        let inv = build_inventory(&["a1".into(), "b".into()], &[]).unwrap();
        let labels: Vec<&str> = inv.symbols().iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, ["PAD", "EOS", "SIL", "WB", "a1", "b"]);
    }

    #[test]
    fn duplicates_are_config_errors() {
        let err = build_inventory(&["a1".into(), "a1".into()], &[]).unwrap_err();
        assert!(matches!(err, FrontendError::Config(_)));
    }

    #[test]
    fn same_label_in_two_languages_is_allowed() {
        let inv = build_inventory(&["m".into()], &["m".into()]).unwrap();
        assert_ne!(inv.id(Language::Man, "m"), inv.id(Language::Eng, "m"));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let inv = default_inventory();
        let text = inv.to_json();
        let back = PhonemeInventory::from_json(&text).unwrap();
        assert_eq!(back, inv);
        assert_eq!(back.to_json(), text);
    }
}
