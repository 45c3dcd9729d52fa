//! Deterministic toy corpus with two acoustically distinct "languages".
//!
//! Every phoneme symbol maps to a fixed formant pattern drawn from a
//! language-specific frequency band: Mandarin symbols are purely voiced with
//! low formants, English symbols sit higher and carry a noise component.
//! Speakers differ by fundamental frequency; Mandarin finals follow a
//! contour per tone. Clips get leading and trailing silence so trimming has
//! something to do.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp::{write_wav, AudioClip, DspError, SAMPLE_RATE};
use crate::frontend::{
    parse_phoneme_string, write_manifest, FrontendError, Language, ManifestEntry, PhonemeInventory,
    UtteranceLanguage, ENG_PHONES, MAN_FINALS, MAN_INITIALS,
};
use crate::tensor::nn::stable_hash;

#[derive(Debug, thiserror::Error)]
pub enum SyntheticError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

pub type Result<T> = std::result::Result<T, SyntheticError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub speakers: usize,
    pub utterances_per_speaker: usize,
    pub seed: u64,
    pub sample_rate: u32,
    /// Syllables (Mandarin) or words (English) per utterance, inclusive.
    pub min_units: usize,
    pub max_units: usize,
    /// Relative frequency of MAN, ENG and MIX utterances.
    pub language_weights: [f64; 3],
    pub lead_silence_ms: f64,
    pub tail_silence_ms: f64,
    /// Fundamental frequency of speaker 0; each further speaker adds `f0_step_hz`.
    pub base_f0_hz: f64,
    pub f0_step_hz: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            speakers: 4,
            utterances_per_speaker: 12,
            seed: 0,
            sample_rate: SAMPLE_RATE,
            min_units: 2,
            max_units: 4,
            language_weights: [1.0, 1.0, 1.0],
            lead_silence_ms: 120.0,
            tail_silence_ms: 300.0,
            base_f0_hz: 110.0,
            f0_step_hz: 40.0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.speakers == 0 || self.sample_rate == 0 {
            return Err(SyntheticError::Config(
                "speakers and sample_rate must be positive".into(),
            ));
        }
        if self.min_units == 0 || self.min_units > self.max_units {
            return Err(SyntheticError::Config(format!(
                "unit range {}..={} is empty",
                self.min_units, self.max_units
            )));
        }
        if self.language_weights.iter().any(|w| !(*w >= 0.0))
            || self.language_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(SyntheticError::Config(
                "language weights must be nonnegative, not all zero".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticUtterance {
    pub entry: ManifestEntry,
    pub clip: AudioClip,
}

fn man_syllable(rng: &mut impl Rng) -> String {
    let ini = MAN_INITIALS.choose(rng).unwrap();
    let fin = MAN_FINALS.choose(rng).unwrap();
    format!("{ini} {fin}{}", rng.gen_range(1..=5))
}

fn eng_word(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(2..=4);
    (0..n)
        .map(|_| *ENG_PHONES.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Random phoneme string of the requested language with `units` syllables
/// or words.
pub fn random_phoneme_string(
    rng: &mut impl Rng,
    language: UtteranceLanguage,
    units: usize,
) -> String {
    let units = units.max(1);
    match language {
        UtteranceLanguage::Man => {
            let s: Vec<String> = (0..units).map(|_| man_syllable(rng)).collect();
            format!("|MAN| {}", s.join(" "))
        }
        UtteranceLanguage::Eng => {
            let w: Vec<String> = (0..units).map(|_| eng_word(rng)).collect();
            format!("|ENG| {}", w.join(" WB "))
        }
        UtteranceLanguage::Mix => {
            let before = units.div_ceil(2);
            let s: Vec<String> = (0..before).map(|_| man_syllable(rng)).collect();
            let mut out = format!("|MAN| {} WB |ENG| {}", s.join(" "), eng_word(rng));
            if units > before {
                let s: Vec<String> = (0..units - before).map(|_| man_syllable(rng)).collect();
                out.push_str(&format!(" WB |MAN| {}", s.join(" ")));
            }
            out
        }
    }
}

/// Formant pattern of one symbol.
struct Voice {
    formants: [(f64, f64); 3],
    noise: f64,
    voiced: bool,
    duration_ms: f64,
}

fn voice_of(label: &str, language: Language) -> Option<Voice> {
    let h = stable_hash(format!("{language}:{label}").as_bytes());
    let u = |k: u32| ((h.rotate_left(k * 13) >> 11) as f64) / ((1u64 << 53) as f64);
    match language {
        Language::Special => None,
        Language::Man => {
            let initial = MAN_INITIALS.contains(&label);
            Some(Voice {
                formants: [
                    (300.0 + 500.0 * u(1), 1.0),
                    (900.0 + 900.0 * u(2), 0.6),
                    (2000.0 + 600.0 * u(3), 0.25),
                ],
                noise: if initial { 0.15 } else { 0.0 },
                voiced: !initial,
                duration_ms: if initial { 45.0 } else { 110.0 },
            })
        }
        Language::Eng => Some(Voice {
            formants: [
                (500.0 + 400.0 * u(1), 0.7),
                (1600.0 + 1000.0 * u(2), 1.0),
                (3000.0 + 1200.0 * u(3), 0.5),
            ],
            noise: 0.1 + 0.3 * u(4),
            voiced: u(5) > 0.25,
            duration_ms: 70.0 + 30.0 * u(6),
        }),
    }
}

/// Relative f0 at position `x ∈ [0,1]` through a syllable final.
fn tone_contour(label: &str, x: f64) -> f64 {
    match label.chars().last() {
        Some('1') => 1.2,
        Some('2') => 0.95 + 0.3 * x,
        Some('3') => 1.0 - 0.8 * x * (1.0 - x) - 0.1 * x,
        Some('4') => 1.3 - 0.45 * x,
        _ => 1.0,
    }
}

/// Renders parsed phoneme ids for a speaker.
pub fn render_ids(
    ids: &[usize],
    speaker: usize,
    inv: &PhonemeInventory,
    cfg: &SyntheticConfig,
    rng: &mut impl Rng,
) -> Result<AudioClip> {
    let sr = cfg.sample_rate as f64;
    let f0 = cfg.base_f0_hz + cfg.f0_step_hz * speaker as f64;
    let nyq = 0.45 * sr;
    let ms = |m: f64| (m * sr / 1000.0).round() as usize;
    let mut out = vec![0.0f64; ms(cfg.lead_silence_ms)];
    let mut phase = 0.0f64;
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    for &id in ids {
        let sym = inv.symbol(id).ok_or(FrontendError::InvalidId {
            id,
            size: inv.len(),
        })?;
        let Some(v) = voice_of(&sym.label, sym.language) else {
            let pause = match sym.label.as_str() {
                "SIL" => 80.0,
                "WB" => 30.0,
                _ => 0.0,
            };
            out.extend(std::iter::repeat_n(0.0, ms(pause)));
            continue;
        };
        let n = ms(v.duration_ms * rng.gen_range(0.9..1.1));
        let ramp = ms(6.0).max(1);
        let mut hp = 0.0f64;
        for i in 0..n {
            let x = i as f64 / n as f64;
            let f = f0
                * if sym.language == Language::Man {
                    tone_contour(&sym.label, x)
                } else {
                    1.0 - 0.1 * x
                };
            phase = (phase + TAU * f / sr) % TAU;
            let mut s = 0.0;
            if v.voiced {
                let mut k = 1.0;
                while k * f < nyq {
                    let hf = k * f;
                    let amp: f64 = v
                        .formants
                        .iter()
                        .map(|&(fc, a)| a * (-((hf - fc) / 150.0).powi(2)).exp())
                        .sum();
                    if amp > 1e-4 {
                        s += amp * (k * phase).sin();
                    }
                    k += 1.0;
                }
            }
            if v.noise > 0.0 {
                hp = 0.6 * hp + noise.sample(rng);
                s += v.noise * hp * 0.5;
            }
            let env = (i.min(n - 1 - i) as f64 / ramp as f64).min(1.0);
            out.push(s * env);
        }
    }
    out.extend(std::iter::repeat_n(0.0, ms(cfg.tail_silence_ms)));
    let peak = out.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let gain = if peak > 0.0 { 0.5 / peak } else { 0.0 };
    let samples = out.into_iter().map(|v| (v * gain) as f32).collect();
    Ok(AudioClip::new(samples, cfg.sample_rate)?)
}

/// Utterances ordered by speaker, then index. Ids look like `s01_0003`.
pub fn generate_corpus(
    cfg: &SyntheticConfig,
    inv: &PhonemeInventory,
) -> Result<Vec<SyntheticUtterance>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total: f64 = cfg.language_weights.iter().sum();
    let langs = [
        UtteranceLanguage::Man,
        UtteranceLanguage::Eng,
        UtteranceLanguage::Mix,
    ];
    let mut out = Vec::new();
    for speaker in 0..cfg.speakers {
        for i in 0..cfg.utterances_per_speaker {
            let mut pick = rng.gen::<f64>() * total;
            let mut language = langs[2];
            for (l, w) in langs.iter().zip(cfg.language_weights) {
                if pick < w {
                    language = *l;
                    break;
                }
                pick -= w;
            }
            let units = rng.gen_range(cfg.min_units..=cfg.max_units);
            let phonemes = random_phoneme_string(&mut rng, language, units);
            let parsed = parse_phoneme_string(&phonemes, inv)?;
            let clip = render_ids(&parsed.ids, speaker, inv, cfg, &mut rng)?;
            let id = format!("s{speaker:02}_{i:04}");
            out.push(SyntheticUtterance {
                entry: ManifestEntry {
                    audio: Some(format!("wav/{id}.wav")),
                    id,
                    speaker,
                    phonemes,
                    language: Some(parsed.language),
                },
                clip,
            });
        }
    }
    Ok(out)
}

/// Writes `wav/<id>.wav` files and a manifest under `dir`; returns the
/// manifest path.
pub fn write_corpus(
    dir: impl AsRef<Path>,
    utterances: &[SyntheticUtterance],
    manifest_name: &str,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let wav_dir = dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| DspError::io(&wav_dir, e))?;
    for u in utterances {
        write_wav(
            dir.join(u.entry.audio.as_deref().unwrap_or_default()),
            &u.clip,
        )?;
    }
    let entries: Vec<ManifestEntry> = utterances.iter().map(|u| u.entry.clone()).collect();
    let path = dir.join(manifest_name);
    write_manifest(&path, &entries)?;
    Ok(path)
}
