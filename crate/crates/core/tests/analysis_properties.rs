use polytts_core::analysis::{
    alignment_svg, calibrate_row, conditional_affinities, dump_embeddings, knn_purity,
    language_separation_score, scatter_svg, silhouette, tsne, AnalysisError, EmbeddingDump,
    EmbeddingSource, PointLabel, TsneConfig,
};
use polytts_core::frontend::{default_inventory, parse_phoneme_string, Language};
use polytts_core::model::{Model, ModelConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// `per` points around each of three centres 10 apart in `dim` dimensions.
fn gaussian_clusters(per: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for c in 0..3 {
        for _ in 0..per {
            points.push(
                (0..dim)
                    .map(|k| if k == c { 10.0 } else { 0.0 } + noise.sample(&mut rng))
                    .collect(),
            );
            labels.push(c);
        }
    }
    (points, labels)
}

fn small_model() -> Model<f32> {
    Model::new(ModelConfig {
        embedding_dim: 8,
        encoder_dim: 8,
        decoder_dim: 8,
        attention_dim: 8,
        prenet_dims: vec![8],
        postnet_dim: 8,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn sample(strings: &[&str]) -> Vec<(Vec<usize>, usize)> {
    let inv = default_inventory();
    strings
        .iter()
        .map(|s| (parse_phoneme_string(s, &inv).unwrap().ids, 0))
        .collect()
}

#[test]
fn phoneme_embedding_dump_is_the_table_rows() {
    let inv = default_inventory();
    let model = small_model();
    let s = sample(&["n i3 h ao3", "|ENG| HH AH L OW"]);
    let dump = dump_embeddings(&model, &inv, &s, EmbeddingSource::PhonemeEmbedding).unwrap();
    let table = model.params().by_name("phoneme_embedding").unwrap();
    assert_eq!(dump.len(), 8);
    assert!(dump.len() <= inv.len());
    assert!(dump.labels.iter().all(|l| l.language != Language::Special));
    for (p, l) in dump.points.iter().zip(&dump.labels) {
        let id = inv.id(l.language, &l.phoneme).unwrap();
        let row: Vec<f64> = table.data()[id * 8..(id + 1) * 8]
            .iter()
            .map(|&v| v as f64)
            .collect();
        assert_eq!(p, &row);
    }
    assert_eq!(dump.missing.len(), inv.len() - 4 - 8);
}

#[test]
fn encoder_dump_of_single_occurrence_is_the_raw_vector() {
    let inv = default_inventory();
    let model = small_model();
    let s = sample(&["n i3 h ao3"]);
    let dump = dump_embeddings(&model, &inv, &s, EmbeddingSource::EncoderOutput).unwrap();
    let enc = model.encode(&s[0].0, 0).unwrap();
    for (t, &id) in s[0].0.iter().enumerate() {
        let sym = inv.symbol(id).unwrap();
        if sym.language == Language::Special {
            continue;
        }
        let k = dump
            .labels
            .iter()
            .position(|l| l.phoneme == sym.label)
            .unwrap();
        let raw: Vec<f64> = enc.outputs.data()[t * 8..(t + 1) * 8]
            .iter()
            .map(|&v| v as f64)
            .collect();
        assert_eq!(dump.points[k], raw);
    }
}

#[test]
fn encoder_dump_averages_repeated_phonemes() {
    let inv = default_inventory();
    let model = small_model();
    let s = sample(&["n i3 n i3"]);
    let dump = dump_embeddings(&model, &inv, &s, EmbeddingSource::EncoderOutput).unwrap();
    let enc = model.encode(&s[0].0, 0).unwrap();
    let k = dump.labels.iter().position(|l| l.phoneme == "n").unwrap();
    for c in 0..8 {
        let mean = (enc.outputs.data()[c] as f64 + enc.outputs.data()[16 + c] as f64) / 2.0;
        assert!((dump.points[k][c] - mean).abs() < 1e-12);
    }
}

#[test]
fn csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let dump = EmbeddingDump::new(
        EmbeddingSource::EncoderOutput,
        vec![vec![0.1, -2.5], vec![1e-9, 3.0]],
        vec![
            PointLabel {
                phoneme: "ao3".into(),
                language: Language::Man,
            },
            PointLabel {
                phoneme: "AH".into(),
                language: Language::Eng,
            },
        ],
    )
    .unwrap();
    assert!(dump.to_csv().starts_with("phoneme,language,d0,d1\n"));
    let path = dir.path().join("dump.csv");
    dump.write_csv(&path).unwrap();
    assert_eq!(
        EmbeddingDump::read_csv(&path, EmbeddingSource::EncoderOutput).unwrap(),
        dump
    );
}

#[test]
fn dump_rejects_mismatched_labels_and_nan() {
    let l = PointLabel {
        phoneme: "a".into(),
        language: Language::Man,
    };
    assert!(
        EmbeddingDump::new(EmbeddingSource::PhonemeEmbedding, vec![vec![0.0]], vec![]).is_err()
    );
    assert!(EmbeddingDump::new(
        EmbeddingSource::PhonemeEmbedding,
        vec![vec![f64::NAN]],
        vec![l]
    )
    .is_err());
}

#[test]
fn calibration_hits_target_entropy_and_rows_are_distributions() {
    let (points, _) = gaussian_clusters(10, 64, 3);
    for perplexity in [2.0, 5.0, 9.0] {
        for c in conditional_affinities(&points, perplexity) {
            assert!((c.entropy - perplexity.ln()).abs() < 1e-4);
            assert!((c.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
    let d2 = [0.0, 1.0, 4.0, 9.0, 16.0, 25.0];
    let c = calibrate_row(&d2, 0, 3.0);
    let h: f64 = -c
        .probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>();
    assert!((h - 3.0f64.ln()).abs() < 1e-4);
    assert_eq!(c.probs[0], 0.0);
}

#[test]
fn three_gaussians_separate_in_two_dimensions() {
    let (points, labels) = gaussian_clusters(10, 64, 0);
    let cfg = TsneConfig {
        perplexity: 8.0,
        ..TsneConfig::default()
    };
    let out = tsne(&points, &cfg).unwrap();
    assert!(knn_purity(&out.embedding, &labels, 5) > 0.9);
    for e in &out.entropies {
        assert!((e - 8.0f64.ln()).abs() < 1e-4);
    }
    let after: Vec<f64> = out
        .kl_history
        .iter()
        .filter(|(it, _)| *it > cfg.exaggeration_iters)
        .map(|(_, kl)| *kl)
        .collect();
    assert!(after.len() >= 10);
    for w in after.windows(2) {
        assert!(w[1] <= w[0] + 1e-8, "KL rose from {} to {}", w[0], w[1]);
    }
}

#[test]
fn tsne_commutes_with_reordering() {
    let (points, _) = gaussian_clusters(6, 5, 1);
    let cfg = TsneConfig {
        perplexity: 4.0,
        n_iters: 300,
        ..TsneConfig::default()
    };
    let base = tsne(&points, &cfg).unwrap().embedding;
    let mut perm: Vec<usize> = (0..points.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| points[i].clone()).collect();
    let out = tsne(&shuffled, &cfg).unwrap().embedding;
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(out[k], base[i]);
    }
}

#[test]
fn tsne_rejects_degenerate_input_and_bad_config() {
    let same = vec![vec![1.0, 2.0]; 20];
    let cfg = TsneConfig {
        perplexity: 5.0,
        ..TsneConfig::default()
    };
    assert!(matches!(
        tsne(&same, &cfg),
        Err(AnalysisError::Degenerate(_))
    ));
    let (points, _) = gaussian_clusters(5, 3, 0);
    let too_high = TsneConfig {
        perplexity: 5.0,
        ..TsneConfig::default()
    };
    assert!(matches!(
        tsne(&points, &too_high),
        Err(AnalysisError::Config(_))
    ));
    let short = TsneConfig {
        perplexity: 3.0,
        n_iters: 100,
        ..TsneConfig::default()
    };
    assert!(matches!(
        tsne(&points, &short),
        Err(AnalysisError::Config(_))
    ));
}

fn labelled(points: Vec<Vec<f64>>, langs: &[Language]) -> EmbeddingDump {
    let labels = langs
        .iter()
        .enumerate()
        .map(|(i, &language)| PointLabel {
            phoneme: format!("p{i}"),
            language,
        })
        .collect();
    EmbeddingDump::new(EmbeddingSource::EncoderOutput, points, labels).unwrap()
}

#[test]
fn separated_point_masses_score_one() {
    let mut points = vec![vec![0.0, 0.0]; 5];
    points.extend(vec![vec![1000.0, 0.0]; 5]);
    let langs: Vec<Language> = (0..10)
        .map(|i| if i < 5 { Language::Man } else { Language::Eng })
        .collect();
    let s = language_separation_score(&labelled(points, &langs)).unwrap();
    assert!((s - 1.0).abs() < 1e-12);
}

#[test]
fn permuted_labels_score_near_zero() {
    let (points, _) = gaussian_clusters(20, 8, 4);
    let n = points.len();
    for seed in 0..20 {
        let mut langs: Vec<Language> = (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    Language::Man
                } else {
                    Language::Eng
                }
            })
            .collect();
        langs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let s = language_separation_score(&labelled(points.clone(), &langs)).unwrap();
        assert!(s.abs() < 0.1, "seed {seed}: {s}");
    }
}

#[test]
fn single_language_dump_is_rejected() {
    let d = labelled(vec![vec![0.0], vec![1.0]], &[Language::Man, Language::Man]);
    assert!(matches!(
        language_separation_score(&d),
        Err(AnalysisError::Data(_))
    ));
}

proptest! {
    #[test]
    fn separation_is_symmetric_and_rotation_invariant(
        raw in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, any::<bool>()), 4..24),
        angle in 0.0f64..std::f64::consts::TAU,
    ) {
        prop_assume!(raw.iter().any(|r| r.2) && raw.iter().any(|r| !r.2));
        let points: Vec<Vec<f64>> = raw.iter().map(|r| vec![r.0, r.1]).collect();
        let labels: Vec<bool> = raw.iter().map(|r| r.2).collect();
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let (c, s) = (angle.cos(), angle.sin());
        let rotated: Vec<Vec<f64>> = points.iter().map(|p| vec![c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect();
        let base = silhouette(&points, &labels).unwrap();
        prop_assert!((-1.0..=1.0).contains(&base));
        prop_assert!((silhouette(&points, &flipped).unwrap() - base).abs() < 1e-12);
        prop_assert!((silhouette(&rotated, &labels).unwrap() - base).abs() < 1e-9);
    }
}

#[test]
fn empty_scatter_is_valid_svg_with_axes() {
    let svg = scatter_svg(&[], &[], "empty").unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert!(doc
        .descendants()
        .any(|n| n.attribute("class") == Some("axes")));
    assert_eq!(
        doc.descendants()
            .filter(|n| n.has_tag_name("circle"))
            .count(),
        2
    );
}

#[test]
fn scatter_has_one_marker_per_point_and_a_legend() {
    let labels = vec![
        PointLabel {
            phoneme: "a<1>".into(),
            language: Language::Man,
        },
        PointLabel {
            phoneme: "AH".into(),
            language: Language::Eng,
        },
    ];
    let svg = scatter_svg(&[[0.0, 1.0], [2.0, -1.0]], &labels, "t-SNE & co").unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let points = doc
        .descendants()
        .find(|n| n.attribute("class") == Some("points"))
        .unwrap();
    assert_eq!(
        points
            .children()
            .filter(|n| n.has_tag_name("circle"))
            .count(),
        2
    );
    assert!(doc
        .descendants()
        .any(|n| n.attribute("class") == Some("legend")));
}

#[test]
fn heatmap_has_steps_times_positions_cells() {
    let weights = vec![vec![0.25; 4]; 7];
    let svg = alignment_svg(&weights, "alignment").unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(
        doc.descendants()
            .filter(|n| n.attribute("class") == Some("cell"))
            .count(),
        28
    );
}
