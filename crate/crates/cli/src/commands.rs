use std::path::{Component, Path, PathBuf};

use polytts_core::analysis::{
    alignment_svg, dump_embeddings, language_separation_score, scatter_svg, tsne, write_svg,
    TsneConfig,
};
use polytts_core::dsp::{
    read_feature_file, read_wav, write_wav, FeatureConfig, FeatureExtractor, GriffinLimConfig,
};
use polytts_core::frontend::{default_inventory, load_manifest, parse_phoneme_string};
use polytts_core::model::{gradcheck_grid, Checkpoint, GradCheckGrid, Model, SpeakerPlacement};
use polytts_core::synthetic::{generate_corpus, write_corpus, SyntheticConfig};
use polytts_core::training::{
    build_corpus_regime, feature_path, train_with, CorpusSelection, RegimeData, Schedule,
    TrainOptions, TrainingRegime, REGIME_SCHEMA_VERSION,
};
use polytts_core::Real;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::error::{CliError, Result};

/// Global settings shared by every command.
pub struct Context {
    pub global: GlobalArgs,
}

impl Context {
    /// `rel` resolved inside the output directory. Absolute paths and `..`
    /// components are refused.
    pub fn output(&self, rel: &Path) -> Result<PathBuf> {
        if rel.as_os_str().is_empty()
            || rel
                .components()
                .any(|c| !matches!(c, Component::Normal(_) | Component::CurDir))
        {
            return Err(CliError::Config(format!(
                "output path {} must be relative and stay inside --out-dir",
                rel.display()
            )));
        }
        let path = self.global.out_dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        Ok(path)
    }

    pub fn seed(&self, default: u64) -> u64 {
        self.global.seed.unwrap_or(default)
    }

    pub fn threads(&self) -> Option<usize> {
        self.global.deterministic.then_some(1)
    }

    fn write_json(&self, rel: &str, value: &impl Serialize) -> Result<PathBuf> {
        let path = self.output(Path::new(rel))?;
        let text = serde_json::to_string_pretty(value).expect("JSON value serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn print(value: serde_json::Value) {
    println!("{value}");
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Fills in every default and seed the command will use, and makes input
/// paths absolute, so the invocation can be replayed on its own.
pub fn resolve(cli: &mut Cli) -> Result<()> {
    let seed = cli.global.seed;
    match &mut cli.command {
        Command::Generate(a) => {
            if a.resolved.is_none() {
                a.resolved = Some(SyntheticConfig {
                    speakers: a.speakers,
                    utterances_per_speaker: a.utterances_per_speaker,
                    min_units: a.min_units,
                    max_units: a.max_units,
                    seed: seed.unwrap_or(0),
                    ..SyntheticConfig::default()
                });
            }
        }
        Command::Corpus(a) => {
            a.sources = a.sources.iter().map(|p| absolute(p)).collect();
            cli.global.seed = Some(seed.unwrap_or(0));
        }
        Command::Features(a) => a.manifest = absolute(&a.manifest),
        Command::Regime(a) => {
            a.avm_manifests = a.avm_manifests.iter().map(|p| absolute(p)).collect();
            a.target_manifest = a.target_manifest.as_deref().map(absolute);
            a.features_dir = absolute(&a.features_dir);
            cli.global.seed = Some(seed.unwrap_or(0));
        }
        Command::Train(a) => {
            if a.resolved.is_none() {
                let mut r = TrainingRegime::load(&a.regime_config)?;
                r.avm_manifests = r.avm_manifests.iter().map(|p| absolute(p)).collect();
                r.target_manifest = r.target_manifest.as_deref().map(absolute);
                r.features_dir = absolute(&r.features_dir);
                if let Some(s) = a.steps {
                    r.schedule.steps = s;
                }
                if let Some(s) = seed {
                    r.model.init_seed = s;
                    r.schedule.seed = s;
                    if let Some(rs) = &mut r.retrain_schedule {
                        rs.seed = s;
                    }
                }
                a.resolved = Some(r);
            }
        }
        Command::Synth(a) => {
            a.checkpoint = absolute(&a.checkpoint);
            cli.global.seed = Some(seed.unwrap_or(0));
        }
        Command::Analyze(a) => {
            a.checkpoint = absolute(&a.checkpoint);
            a.manifest = absolute(&a.manifest);
            if a.resolved.is_none() {
                let d = TsneConfig::default();
                a.resolved = Some(TsneConfig {
                    perplexity: a.perplexity.unwrap_or(d.perplexity),
                    n_iters: a.iters.unwrap_or(d.n_iters),
                    seed: seed.unwrap_or(d.seed),
                    ..d
                });
            }
        }
        Command::Gradcheck(a) => {
            if a.resolved.is_none() {
                let mut grid: GradCheckGrid = match &a.config_grid {
                    Some(p) => read_json(p)?,
                    None => GradCheckGrid::default(),
                };
                if let Some(s) = seed {
                    grid.seed = s;
                }
                a.resolved = Some(grid);
            }
        }
        Command::Replay(_) => {}
    }
    Ok(())
}

pub fn execute(ctx: &Context, command: &Command) -> Result<()> {
    match command {
        Command::Generate(a) => generate(ctx, a),
        Command::Corpus(a) => corpus(ctx, a),
        Command::Features(a) => features(ctx, a),
        Command::Regime(a) => regime(ctx, a),
        Command::Train(a) => match ctx.global.precision {
            Precision::F32 => train::<f32>(ctx, a),
            Precision::F64 => train::<f64>(ctx, a),
        },
        Command::Synth(a) => match ctx.global.precision {
            Precision::F32 => synth::<f32>(ctx, a),
            Precision::F64 => synth::<f64>(ctx, a),
        },
        Command::Analyze(a) => match ctx.global.precision {
            Precision::F32 => analyze::<f32>(ctx, a),
            Precision::F64 => analyze::<f64>(ctx, a),
        },
        Command::Gradcheck(a) => gradcheck(ctx, a),
        Command::Replay(_) => Err(CliError::Config("replay cannot replay itself".into())),
    }
}

fn generate(ctx: &Context, a: &GenerateArgs) -> Result<()> {
    let cfg = a.resolved.clone().expect("resolved before execution");
    let manifest = ctx.output(&a.manifest)?;
    let inv = default_inventory();
    let utts = generate_corpus(&cfg, &inv)?;
    let name = a.manifest.to_string_lossy();
    write_corpus(&ctx.global.out_dir, &utts, &name)?;
    log::info!("wrote {} utterances", utts.len());
    print(json!({ "manifest": manifest, "utterances": utts.len() }));
    Ok(())
}

fn corpus(ctx: &Context, a: &CorpusArgs) -> Result<()> {
    let out = ctx.output(&a.out)?;
    let sel = CorpusSelection {
        language: a.language,
        size: a.size,
        target_speaker: a.target_speaker,
        seed: ctx.seed(0),
    };
    let prov = build_corpus_regime(&a.sources, &sel, &out, &default_inventory())?;
    print(serde_json::to_value(&prov).expect("provenance serializes"));
    Ok(())
}

#[derive(Serialize)]
struct FeatureLine {
    id: String,
    frames: usize,
    cached: bool,
}

fn features(ctx: &Context, a: &FeaturesArgs) -> Result<()> {
    let inv = default_inventory();
    let manifest = load_manifest(&a.manifest, &inv)?;
    let dir = ctx.output(&a.out)?;
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let cfg = FeatureConfig::default();
    let fx = FeatureExtractor::new(cfg.clone())?;
    let work = |r: &polytts_core::frontend::UtteranceRecord| -> Result<FeatureLine> {
        let path = feature_path(&dir, &r.utterance_id);
        if let Ok(cached) = read_feature_file(&path) {
            if cached.mel.cols() == cfg.n_mels && cached.linear.cols() == cfg.stft.n_bins() {
                return Ok(FeatureLine {
                    id: r.utterance_id.clone(),
                    frames: cached.frames(),
                    cached: true,
                });
            }
        }
        let audio = r.audio.as_ref().ok_or_else(|| {
            CliError::Config(format!("utterance {} has no audio path", r.utterance_id))
        })?;
        let in_file = |e: polytts_core::dsp::DspError| CliError::context(audio.display(), e.into());
        let clip = read_wav(audio, Some(cfg.sample_rate)).map_err(in_file)?;
        let pair = fx.extract(&clip).map_err(in_file)?;
        polytts_core::dsp::write_feature_file(&path, &pair)?;
        Ok(FeatureLine {
            id: r.utterance_id.clone(),
            frames: pair.frames(),
            cached: false,
        })
    };
    let run = || manifest.records.par_iter().map(work).collect::<Vec<_>>();
    let results = match ctx.threads() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let mut hits = 0;
    let mut lines = Vec::with_capacity(results.len());
    for r in results {
        let line = r?;
        hits += usize::from(line.cached);
        lines.push(line);
    }
    for l in &lines {
        println!("{}", serde_json::to_string(l).expect("line serializes"));
    }
    log::info!(
        "{} files, {} cache hits, {} extracted",
        lines.len(),
        hits,
        lines.len() - hits
    );
    Ok(())
}

fn regime(ctx: &Context, a: &RegimeArgs) -> Result<()> {
    let seed = ctx.seed(0);
    let mut schedule = Schedule {
        seed,
        ..Schedule::default()
    };
    if let Some(s) = a.steps {
        schedule.steps = s;
    }
    if let Some(b) = a.batch_size {
        schedule.batch_size = b;
    }
    if let Some(lr) = a.learning_rate {
        schedule.learning_rate = lr;
    }
    if let Some(g) = a.guided_attention {
        schedule.guided_attention = g;
    }
    let mut r = TrainingRegime {
        schema_version: REGIME_SCHEMA_VERSION,
        regime: a.kind,
        target_speaker: a.target_speaker,
        avm_manifests: a.avm_manifests.clone(),
        target_manifest: a.target_manifest.clone(),
        features_dir: a.features_dir.clone(),
        model: Default::default(),
        retrain_schedule: a.retrain_steps.map(|steps| Schedule {
            steps,
            ..schedule.clone()
        }),
        schedule,
        freeze: None,
    };
    r.model = r.model.clone().with_variant(a.variant, a.placement);
    r.model.init_seed = seed;
    if let Some(n) = a.speakers {
        r.model.speaker_count = n;
    }
    r.validate()?;
    let path = ctx.output(&a.out)?;
    let text = serde_json::to_string_pretty(&r).expect("regime serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    print(json!({ "regime": path }));
    Ok(())
}

fn train<F: Real>(ctx: &Context, a: &TrainArgs) -> Result<()> {
    let regime = a.resolved.as_ref().expect("resolved before execution");
    regime.validate()?;
    let data = RegimeData::load(regime, &default_inventory())?;
    log::info!(
        "{}: {} AVM and {} target utterances",
        regime.regime,
        data.avm.len(),
        data.target.len()
    );
    let opts = TrainOptions {
        out_dir: Some(ctx.global.out_dir.clone()),
        threads: ctx.threads(),
    };
    let out = train_with::<F>(regime, &data, &opts)?;
    let final_path = ctx.output(Path::new("final.ptck"))?;
    let hash = out.checkpoint.save(&final_path)?;
    let log_path = ctx.output(Path::new("train_log.jsonl"))?;
    out.log.write(&log_path)?;
    let losses: Vec<f64> = out.log.steps().map(|s| s.loss).collect();
    print(json!({
        "checkpoint": final_path,
        "hash": hash,
        "log": log_path,
        "steps": losses.len(),
        "initial_loss": losses.first(),
        "final_loss": losses.last(),
    }));
    Ok(())
}

fn synth<F: Real>(ctx: &Context, a: &SynthArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model: Model<F> = ck.to_model()?;
    model.config().check_speaker(a.speaker)?;
    let ids = parse_phoneme_string(&a.phonemes, &default_inventory())?.ids;
    let gl = GriffinLimConfig {
        n_iters: a.gl_iters,
        seed: ctx.seed(0),
        ..GriffinLimConfig::default()
    };
    let wav = ctx.output(&a.out)?;
    let out = model.synthesize(&ids, a.speaker, ck.norm.as_ref(), &gl)?;
    write_wav(&wav, &out.audio)?;
    let svg_path = wav.with_extension("alignment.svg");
    let weights: Vec<Vec<f64>> = out.run.traces.iter().map(|t| t.weights.clone()).collect();
    write_svg(
        &svg_path,
        &alignment_svg(&weights, &format!("alignment: {}", a.phonemes))?,
    )?;
    print(json!({
        "wav": wav,
        "alignment": svg_path,
        "decoder_steps": out.run.steps(),
        "hit_max_steps": out.run.hit_max_steps,
        "seconds": out.audio.duration_secs(),
        "spectral_convergence": out.convergence.last(),
    }));
    Ok(())
}

fn analyze<F: Real>(ctx: &Context, a: &AnalyzeArgs) -> Result<()> {
    let cfg = a.resolved.as_ref().expect("resolved before execution");
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model: Model<F> = ck.to_model()?;
    let inv = default_inventory();
    let manifest = load_manifest(&a.manifest, &inv)?;
    let conditioned = model.config().speaker_placement != SpeakerPlacement::None;
    let sample = manifest
        .records
        .iter()
        .map(|r| {
            let speaker = if conditioned { r.speaker_id } else { 0 };
            model.config().check_speaker(speaker)?;
            Ok((r.phoneme_ids.clone(), speaker))
        })
        .collect::<Result<Vec<_>>>()?;
    let dump = dump_embeddings(&model, &inv, &sample, a.source)?;
    if !dump.missing.is_empty() {
        log::warn!("excluded (absent from sample): {}", dump.missing.join(" "));
    }
    let prefix = a.out.to_string_lossy().into_owned();
    let csv = ctx.output(Path::new(&format!("{prefix}.csv")))?;
    dump.write_csv(&csv)?;
    let score = language_separation_score(&dump)?;
    let result = tsne(&dump.points, cfg)?;
    let svg = ctx.output(Path::new(&format!("{prefix}.svg")))?;
    let title = format!("t-SNE of {} (silhouette {score:.3})", a.source);
    write_svg(&svg, &scatter_svg(&result.embedding, &dump.labels, &title)?)?;
    let coords: Vec<[f64; 2]> = result.embedding.clone();
    ctx.write_json(
        &format!("{prefix}.tsne.json"),
        &json!({ "labels": dump.labels, "points": coords }),
    )?;
    print(json!({
        "source": a.source,
        "points": dump.len(),
        "excluded": dump.missing.len(),
        "separation_score": score,
        "final_kl": result.kl_history.last().map(|k| k.1),
        "csv": csv,
        "svg": svg,
    }));
    Ok(())
}

fn gradcheck(ctx: &Context, a: &GradcheckArgs) -> Result<()> {
    let grid = a.resolved.as_ref().expect("resolved before execution");
    let start = std::time::Instant::now();
    let cells = gradcheck_grid(grid)?;
    for c in &cells {
        eprintln!(
            "{:<6} {:<7} coords {:>5}  max rel err {:.3e}  {}",
            c.variant.to_string(),
            c.placement.to_string(),
            c.coords,
            c.max_rel_err,
            if c.passed { "ok" } else { "FAIL" }
        );
        if !c.passed {
            eprintln!("{}", c.report.to_table());
        }
    }
    let failed = cells.iter().filter(|c| !c.passed).count();
    let path = ctx.write_json("gradcheck.json", &cells)?;
    print(json!({
        "cells": cells.len(),
        "failed": failed,
        "tolerance": grid.tolerance,
        "max_rel_err": cells.iter().map(|c| c.max_rel_err).fold(0.0, f64::max),
        "seconds": start.elapsed().as_secs_f64(),
        "report": path,
    }));
    if failed > 0 {
        return Err(CliError::Verification(format!(
            "{failed} of {} grid cells exceed relative error {}",
            cells.len(),
            grid.tolerance
        )));
    }
    Ok(())
}
