use std::collections::BTreeSet;

use crate::frontend::Language;

use super::{AnalysisError, EmbeddingDump, Result};

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean silhouette coefficient under Euclidean distance, in `[-1, 1]`.
/// Points alone in their cluster score zero.
pub fn silhouette<L: Ord + Copy>(points: &[Vec<f64>], labels: &[L]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(AnalysisError::Data(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    let clusters: Vec<L> = labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if clusters.len() < 2 {
        return Err(AnalysisError::Degenerate(
            "silhouette needs at least two clusters".into(),
        ));
    }
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mut sums = vec![0.0; clusters.len()];
        let mut counts = vec![0usize; clusters.len()];
        for (j, q) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            let c = clusters
                .binary_search(&labels[j])
                .expect("label collected above");
            sums[c] += distance(p, q);
            counts[c] += 1;
        }
        let own = clusters
            .binary_search(&labels[i])
            .expect("label collected above");
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..clusters.len())
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / points.len() as f64)
}

/// Silhouette of the full-dimensional points with language as the cluster.
pub fn language_separation_score(dump: &EmbeddingDump) -> Result<f64> {
    let langs = dump.languages();
    let distinct: BTreeSet<Language> = langs.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(AnalysisError::Data(format!(
            "separation needs two languages, dump has {:?}",
            distinct
        )));
    }
    silhouette(&dump.points, &langs)
}
