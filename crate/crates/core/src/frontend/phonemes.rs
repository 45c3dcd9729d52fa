use super::inventory::{PhonemeInventory, MAN_INITIALS};
use super::{FrontendError, Language, Result, UtteranceLanguage};

const MAN_TAG: &str = "|MAN|";
const ENG_TAG: &str = "|ENG|";
/// Special symbols that may be written in phoneme strings.
const WRITABLE_SPECIAL: [&str; 2] = ["SIL", "WB"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedPhonemes {
    /// Symbol ids, terminated by EOS.
    pub ids: Vec<usize>,
    pub language: UtteranceLanguage,
}

/// MIX iff both Mandarin and English symbols occur; `None` when neither does.
pub fn classify(ids: &[usize], inv: &PhonemeInventory) -> Option<UtteranceLanguage> {
    let has = |l| ids.iter().any(|&i| inv.language_of(i) == Some(l));
    match (has(Language::Man), has(Language::Eng)) {
        (true, true) => Some(UtteranceLanguage::Mix),
        (true, false) => Some(UtteranceLanguage::Man),
        (false, true) => Some(UtteranceLanguage::Eng),
        (false, false) => None,
    }
}

/// Splits a toned pinyin syllable such as `zhang1` into initial and final.
fn split_syllable(token: &str, inv: &PhonemeInventory) -> Option<Vec<usize>> {
    let tone = token.chars().last().filter(|c| ('1'..='5').contains(c))?;
    let body = &token[..token.len() - 1];
    let mut initials: Vec<&str> = MAN_INITIALS.to_vec();
    initials.sort_by_key(|i| std::cmp::Reverse(i.len()));
    for ini in initials {
        if let Some(rest) = body.strip_prefix(ini) {
            if rest.is_empty() {
                continue;
            }
            if let (Some(a), Some(b)) = (
                inv.id(Language::Man, ini),
                inv.id(Language::Man, &format!("{rest}{tone}")),
            ) {
                return Some(vec![a, b]);
            }
        }
    }
    None
}

fn lookup(token: &str, scope: Language, inv: &PhonemeInventory) -> Option<Vec<usize>> {
    if WRITABLE_SPECIAL.contains(&token) {
        return inv.id(Language::Special, token).map(|i| vec![i]);
    }
    match scope {
        Language::Man => {
            let lower = token.to_lowercase();
            inv.id(Language::Man, &lower)
                .map(|i| vec![i])
                .or_else(|| split_syllable(&lower, inv))
        }
        Language::Eng => {
            let upper = token.to_uppercase();
            let stripped = upper.trim_end_matches(['0', '1', '2']);
            inv.id(Language::Eng, &upper)
                .or_else(|| inv.id(Language::Eng, stripped))
                .map(|i| vec![i])
        }
        Language::Special => None,
    }
}

/// Parses whitespace-separated tokens under `|MAN|` / `|ENG|` scope tags
/// (Mandarin by default). Mandarin tokens may be phonemes (`zh`, `ang1`) or
/// toned syllables (`zhang1`); English stress digits are dropped. `SIL` and
/// `WB` are accepted in either scope. EOS is appended.
pub fn parse_phoneme_string(s: &str, inv: &PhonemeInventory) -> Result<ParsedPhonemes> {
    let mut scope = Language::Man;
    let mut ids = Vec::new();
    for (position, token) in s.split_whitespace().enumerate() {
        match token {
            MAN_TAG => scope = Language::Man,
            ENG_TAG => scope = Language::Eng,
            _ => match lookup(token, scope, inv) {
                Some(found) => ids.extend(found),
                None => {
                    return Err(FrontendError::UnknownToken {
                        token: token.to_string(),
                        position,
                        language: scope,
                    })
                }
            },
        }
    }
    if ids.is_empty() {
        return Err(FrontendError::EmptyPhonemes);
    }
    let language = classify(&ids, inv).ok_or(FrontendError::EmptyPhonemes)?;
    ids.push(inv.eos());
    Ok(ParsedPhonemes { ids, language })
}

/// Canonical text for an id sequence: one symbol per token, a scope tag
/// before the first symbol of each language run, trailing EOS dropped.
pub fn render_phonemes(ids: &[usize], inv: &PhonemeInventory) -> Result<String> {
    let ids = match ids.last() {
        Some(&last) if last == inv.eos() => &ids[..ids.len() - 1],
        _ => ids,
    };
    let mut scope = None;
    let mut out: Vec<&str> = Vec::new();
    for &id in ids {
        let sym = inv.symbol(id).ok_or(FrontendError::InvalidId {
            id,
            size: inv.len(),
        })?;
        match sym.language {
            Language::Special => {}
            lang if scope != Some(lang) => {
                out.push(if lang == Language::Man {
                    MAN_TAG
                } else {
                    ENG_TAG
                });
                scope = Some(lang);
            }
            _ => {}
        }
        out.push(&sym.label);
    }
    Ok(out.join(" "))
}
