use polytts_core::frontend::{
    default_inventory, parse_phoneme_string, render_phonemes, FrontendError, Language,
    PhonemeInventory, UtteranceLanguage,
};
use proptest::prelude::*;

const GOLDEN: &str = include_str!("golden/inventory.json");

#[test]
fn shipped_inventory_matches_golden_file() {
    let inv = default_inventory();
    if std::env::var_os("POLYTTS_BLESS").is_some() {
        std::fs::write(
            concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/inventory.json"),
            inv.to_json(),
        )
        .unwrap();
        return;
    }
    assert_eq!(inv.to_json(), GOLDEN);
    assert_eq!(inv.len(), 246);
}

#[test]
fn golden_lookup_of_a_greeting() {
    let inv = PhonemeInventory::from_json(GOLDEN).unwrap();
    let p = parse_phoneme_string("|MAN| ni3 hao3", &inv).unwrap();
    // ids frozen from the golden file: n, i3, h, ao3, EOS
    let want: Vec<usize> = ["n", "i3", "h", "ao3"]
        .iter()
        .map(|l| inv.id(Language::Man, l).unwrap())
        .chain([inv.eos()])
        .collect();
    assert_eq!(p.ids, want);
    assert_eq!(p.ids, vec![115, 63, 60, 26, 1]);
}

#[test]
fn building_twice_serializes_identically() {
    assert_eq!(default_inventory().to_json(), default_inventory().to_json());
}

fn token_strategy() -> impl Strategy<Value = (bool, String)> {
    let inv = default_inventory();
    let man: Vec<String> = inv
        .symbols()
        .iter()
        .filter(|s| s.language == Language::Man)
        .map(|s| s.label.clone())
        .collect();
    let eng: Vec<String> = inv
        .symbols()
        .iter()
        .filter(|s| s.language == Language::Eng)
        .map(|s| s.label.clone())
        .collect();
    prop_oneof![
        6 => proptest::sample::select(man).prop_map(|l| (false, l)),
        3 => proptest::sample::select(eng).prop_map(|l| (true, l)),
        1 => proptest::sample::select(vec!["SIL".to_string(), "WB".to_string()]).prop_map(|l| (false, l)),
    ]
}

/// Writes tokens with a scope tag whenever the language changes.
fn write(tokens: &[(bool, String)]) -> String {
    let mut out = Vec::new();
    let mut eng = false;
    for (is_eng, label) in tokens {
        let special = label == "SIL" || label == "WB";
        if !special && *is_eng != eng {
            out.push(if *is_eng { "|ENG|" } else { "|MAN|" }.to_string());
            eng = *is_eng;
        }
        out.push(label.clone());
    }
    out.join(" ")
}

proptest! {
    #[test]
    fn parse_render_parse_is_a_fixed_point(tokens in proptest::collection::vec(token_strategy(), 1..30)) {
        let inv = default_inventory();
        let text = write(&tokens);
        match parse_phoneme_string(&text, &inv) {
            Ok(p) => {
                prop_assert!(p.ids.iter().all(|&i| i < inv.len()));
                let canon = render_phonemes(&p.ids, &inv).unwrap();
                let again = parse_phoneme_string(&canon, &inv).unwrap();
                prop_assert_eq!(&again, &p);
                prop_assert_eq!(render_phonemes(&again.ids, &inv).unwrap(), canon);
                let has_man = tokens.iter().any(|(e, l)| !e && l != "SIL" && l != "WB");
                let has_eng = tokens.iter().any(|(e, _)| *e);
                let want = match (has_man, has_eng) {
                    (true, true) => UtteranceLanguage::Mix,
                    (true, false) => UtteranceLanguage::Man,
                    _ => UtteranceLanguage::Eng,
                };
                prop_assert_eq!(p.language, want);
            }
            Err(FrontendError::EmptyPhonemes) => {
                prop_assert!(tokens.iter().all(|(_, l)| l == "SIL" || l == "WB"));
            }
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}
