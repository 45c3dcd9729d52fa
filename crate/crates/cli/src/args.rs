use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use polytts_core::analysis::{EmbeddingSource, TsneConfig};
use polytts_core::frontend::UtteranceLanguage;
use polytts_core::model::{AttentionVariant, GradCheckGrid, SpeakerPlacement};
use polytts_core::synthetic::SyntheticConfig;
use polytts_core::training::{Regime, TrainingRegime};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Parser, Serialize, Deserialize)]
#[command(
    name = "polytts",
    version,
    about = "Mixed-lingual TTS: features, training, synthesis and analysis"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GlobalArgs {
    /// Overrides every seed of the invoked command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Single worker thread and ordered batching.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
    /// Every output of the command is written below this directory.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Generate a synthetic two-language corpus (WAV files plus manifest).
    Generate(GenerateArgs),
    /// Select a seeded target-speaker subset of one language.
    Corpus(CorpusArgs),
    /// Trim, extract and cache features for every manifest entry.
    Features(FeaturesArgs),
    /// Write a training regime file.
    Regime(RegimeArgs),
    /// Train a model as declared by a regime file.
    Train(TrainArgs),
    /// Synthesize a phoneme string to WAV with an alignment plot.
    Synth(SynthArgs),
    /// Dump embeddings, run t-SNE and score language separation.
    Analyze(AnalyzeArgs),
    /// End-to-end finite-difference checks over the variant × placement grid.
    Gradcheck(GradcheckArgs),
    /// Re-run a command from its resolved-config file.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Corpus(_) => "corpus",
            Command::Features(_) => "features",
            Command::Regime(_) => "regime",
            Command::Train(_) => "train",
            Command::Synth(_) => "synth",
            Command::Analyze(_) => "analyze",
            Command::Gradcheck(_) => "gradcheck",
            Command::Replay(_) => "replay",
        }
    }
}

pub fn parse_language(s: &str) -> Result<UtteranceLanguage, String> {
    match s.to_ascii_uppercase().as_str() {
        "MAN" => Ok(UtteranceLanguage::Man),
        "ENG" => Ok(UtteranceLanguage::Eng),
        "MIX" => Ok(UtteranceLanguage::Mix),
        _ => Err(format!("unknown language {s:?} (expected MAN, ENG or MIX)")),
    }
}

pub fn parse_regime(s: &str) -> Result<Regime, String> {
    serde_json::from_value(serde_json::Value::String(
        s.to_ascii_uppercase().replace('-', "_"),
    ))
    .map_err(|_| format!("unknown regime {s:?}"))
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 4)]
    pub speakers: usize,
    #[arg(long, default_value_t = 12)]
    pub utterances_per_speaker: usize,
    #[arg(long, default_value_t = 2)]
    pub min_units: usize,
    #[arg(long, default_value_t = 4)]
    pub max_units: usize,
    /// Manifest file name inside the output directory.
    #[arg(long, default_value = "manifest.jsonl")]
    pub manifest: PathBuf,
    #[arg(skip)]
    #[serde(default)]
    pub resolved: Option<SyntheticConfig>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct CorpusArgs {
    /// Source manifests to draw from.
    #[arg(long = "source", required = true)]
    pub sources: Vec<PathBuf>,
    #[arg(long, value_parser = parse_language)]
    pub language: UtteranceLanguage,
    #[arg(long)]
    pub size: usize,
    #[arg(long)]
    pub target_speaker: usize,
    /// Output manifest name inside the output directory.
    #[arg(long, default_value = "target.jsonl")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Cache directory inside the output directory.
    #[arg(long, default_value = "features")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct RegimeArgs {
    #[arg(long, value_parser = parse_regime)]
    pub kind: Regime,
    #[arg(long, default_value_t = 0)]
    pub target_speaker: usize,
    #[arg(long = "avm", required = true)]
    pub avm_manifests: Vec<PathBuf>,
    #[arg(long)]
    pub target_manifest: Option<PathBuf>,
    #[arg(long)]
    pub features_dir: PathBuf,
    #[arg(long, default_value_t = AttentionVariant::Base)]
    pub variant: AttentionVariant,
    #[arg(long, default_value_t = SpeakerPlacement::SeDec)]
    pub placement: SpeakerPlacement,
    #[arg(long)]
    pub speakers: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub retrain_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub guided_attention: Option<f64>,
    /// Regime file name inside the output directory.
    #[arg(long, default_value = "regime.json")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub regime_config: PathBuf,
    /// Overrides the phase-1 step count.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(skip)]
    #[serde(default)]
    pub resolved: Option<TrainingRegime>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub phonemes: String,
    #[arg(long, default_value_t = 0)]
    pub speaker: usize,
    /// WAV name inside the output directory; the alignment plot goes next to it.
    #[arg(long, default_value = "synth.wav")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub gl_iters: usize,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "ENCODER_OUTPUT")]
    pub source: EmbeddingSource,
    /// Corpus sample whose phonemes are analysed.
    #[arg(long)]
    pub manifest: PathBuf,
    /// File name prefix inside the output directory.
    #[arg(long, default_value = "analysis")]
    pub out: PathBuf,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(skip)]
    #[serde(default)]
    pub resolved: Option<TsneConfig>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GradcheckArgs {
    /// JSON grid description; defaults to the built-in toy grid.
    #[arg(long)]
    pub config_grid: Option<PathBuf>,
    #[arg(skip)]
    #[serde(default)]
    pub resolved: Option<GradCheckGrid>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// A `<command>.resolved.json` written by an earlier run.
    #[arg(long)]
    pub resolved: PathBuf,
}
