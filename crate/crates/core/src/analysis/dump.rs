use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::frontend::{Language, PhonemeInventory};
use crate::model::Model;
use crate::tensor::Real;

use super::{AnalysisError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EmbeddingSource {
    /// Rows of the phoneme embedding table.
    PhonemeEmbedding,
    /// Encoder outputs averaged per phoneme type.
    EncoderOutput,
}

impl std::fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmbeddingSource::PhonemeEmbedding => "PHONEME_EMBEDDING",
            EmbeddingSource::EncoderOutput => "ENCODER_OUTPUT",
        })
    }
}

impl std::str::FromStr for EmbeddingSource {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "PHONEME_EMBEDDING" => Ok(EmbeddingSource::PhonemeEmbedding),
            "ENCODER_OUTPUT" => Ok(EmbeddingSource::EncoderOutput),
            _ => Err(AnalysisError::Config(format!(
                "unknown embedding source {s:?} (expected PHONEME_EMBEDDING or ENCODER_OUTPUT)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointLabel {
    pub phoneme: String,
    pub language: Language,
}

/// One vector per phoneme type.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingDump {
    pub source: EmbeddingSource,
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<PointLabel>,
    /// Non-special symbols that never occurred in the sample.
    pub missing: Vec<String>,
}

impl EmbeddingDump {
    pub fn new(
        source: EmbeddingSource,
        points: Vec<Vec<f64>>,
        labels: Vec<PointLabel>,
    ) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(AnalysisError::Data(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        if let Some(first) = points.first() {
            if let Some(i) = points.iter().position(|p| p.len() != first.len()) {
                return Err(AnalysisError::Data(format!(
                    "point {i} has dimension {}, expected {}",
                    points[i].len(),
                    first.len()
                )));
            }
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(AnalysisError::Data(format!(
                "point {i} has non-finite values"
            )));
        }
        Ok(EmbeddingDump {
            source,
            points,
            labels,
            missing: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn languages(&self) -> Vec<Language> {
        self.labels.iter().map(|l| l.language).collect()
    }

    /// `phoneme,language,d0,...` with one row per point.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["phoneme".to_string(), "language".to_string()];
        header.extend((0..self.dim()).map(|i| format!("d{i}")));
        w.write_record(&header).expect("in-memory CSV");
        for (p, l) in self.points.iter().zip(&self.labels) {
            let mut row = vec![l.phoneme.clone(), l.language.to_string()];
            row.extend(p.iter().map(|v| v.to_string()));
            w.write_record(&row).expect("in-memory CSV");
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("UTF-8 CSV")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|source| AnalysisError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read_csv(path: impl AsRef<Path>, source: EmbeddingSource) -> Result<Self> {
        let path = path.as_ref();
        let csv_err = |e| AnalysisError::Csv {
            path: path.to_path_buf(),
            source: e,
        };
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let header = r.headers().map_err(csv_err)?.clone();
        if header.get(0) != Some("phoneme") || header.get(1) != Some("language") {
            return Err(AnalysisError::Data(format!(
                "{}: header must start with phoneme,language",
                path.display()
            )));
        }
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let bad = |what: &str| {
                AnalysisError::Data(format!("{} row {}: {what}", path.display(), i + 1))
            };
            let language = match &rec[1] {
                "MAN" => Language::Man,
                "ENG" => Language::Eng,
                "SPECIAL" => Language::Special,
                other => return Err(bad(&format!("unknown language {other:?}"))),
            };
            labels.push(PointLabel {
                phoneme: rec[0].to_string(),
                language,
            });
            points.push(
                rec.iter()
                    .skip(2)
                    .map(|v| {
                        v.parse::<f64>()
                            .map_err(|_| bad(&format!("bad number {v:?}")))
                    })
                    .collect::<Result<Vec<f64>>>()?,
            );
        }
        EmbeddingDump::new(source, points, labels)
    }
}

/// One point per non-special phoneme type present in `sample`, in inventory
/// order. `sample` holds `(phoneme ids, speaker)` utterances.
pub fn dump_embeddings<F: Real>(
    model: &Model<F>,
    inv: &PhonemeInventory,
    sample: &[(Vec<usize>, usize)],
    source: EmbeddingSource,
) -> Result<EmbeddingDump> {
    if inv.len() != model.config().phoneme_vocab {
        return Err(AnalysisError::Config(format!(
            "inventory has {} symbols, model vocabulary is {}",
            inv.len(),
            model.config().phoneme_vocab
        )));
    }
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (ids, speaker) in sample {
        match source {
            EmbeddingSource::PhonemeEmbedding => {
                for &id in ids {
                    if id >= inv.len() {
                        return Err(AnalysisError::Data(format!(
                            "phoneme id {id} outside inventory"
                        )));
                    }
                    sums.entry(id).or_insert((Vec::new(), 1));
                }
            }
            EmbeddingSource::EncoderOutput => {
                let enc = model.encode(ids, *speaker)?;
                let d = enc.outputs.cols();
                for (t, &id) in ids.iter().enumerate() {
                    let row = &enc.outputs.data()[t * d..(t + 1) * d];
                    let e = sums.entry(id).or_insert_with(|| (vec![0.0; d], 0));
                    e.0.iter_mut().zip(row).for_each(|(a, b)| *a += b.as_f64());
                    e.1 += 1;
                }
            }
        }
    }
    let table = model.params().get(model.embedding_param());
    let dp = table.cols();
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut missing = Vec::new();
    for sym in inv.symbols() {
        if sym.language == Language::Special {
            continue;
        }
        match sums.get(&sym.id) {
            Some((sum, count)) => {
                points.push(match source {
                    EmbeddingSource::PhonemeEmbedding => table.data()
                        [sym.id * dp..(sym.id + 1) * dp]
                        .iter()
                        .map(|v| v.as_f64())
                        .collect(),
                    EmbeddingSource::EncoderOutput => {
                        sum.iter().map(|s| s / *count as f64).collect()
                    }
                });
                labels.push(PointLabel {
                    phoneme: sym.label.clone(),
                    language: sym.language,
                });
            }
            None => missing.push(format!("{}:{}", sym.language, sym.label)),
        }
    }
    if !missing.is_empty() {
        log::warn!(
            "{} phoneme types absent from the sample and excluded",
            missing.len()
        );
    }
    let mut dump = EmbeddingDump::new(source, points, labels)?;
    dump.missing = missing;
    Ok(dump)
}
