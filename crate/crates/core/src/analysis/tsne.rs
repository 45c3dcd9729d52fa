use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AnalysisError, Result};

/// Exact t-SNE settings. The output is always two-dimensional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub n_iters: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub exaggeration: f64,
    /// Iterations run with exaggerated affinities and low momentum.
    pub exaggeration_iters: usize,
    /// Record the KL objective every this many iterations.
    pub kl_every: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 15.0,
            n_iters: 1000,
            learning_rate: 200.0,
            seed: 0,
            exaggeration: 4.0,
            exaggeration_iters: 100,
            kl_every: 50,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.perplexity > 1.0) || self.perplexity >= n as f64 / 3.0 {
            return Err(AnalysisError::Config(format!(
                "perplexity {} must be in (1, n/3) for n = {n}",
                self.perplexity
            )));
        }
        if self.n_iters < 250 {
            return Err(AnalysisError::Config(format!(
                "n_iters {} below 250",
                self.n_iters
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.exaggeration >= 1.0) || self.kl_every == 0 {
            return Err(AnalysisError::Config(
                "learning_rate and kl_every must be positive, exaggeration at least 1".into(),
            ));
        }
        if self.exaggeration_iters >= self.n_iters {
            return Err(AnalysisError::Config(
                "exaggeration_iters must be below n_iters".into(),
            ));
        }
        Ok(())
    }
}

/// A calibrated conditional distribution `p_{j|i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    /// Row over all points; the diagonal entry is zero.
    pub probs: Vec<f64>,
    /// Precision `1 / 2σ²`.
    pub beta: f64,
    /// Shannon entropy in nats.
    pub entropy: f64,
}

const ENTROPY_TOLERANCE: f64 = 1e-5;

fn row_distribution(d2: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    let min = d2
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = d2
        .iter()
        .enumerate()
        .map(|(j, &d)| {
            if j == i {
                0.0
            } else {
                (-beta * (d - min)).exp()
            }
        })
        .collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    let h = -p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>();
    (p, h)
}

/// Bisection on the precision of point `i` so that the entropy of
/// `p_{·|i}` equals `ln(perplexity)`. `d2` holds squared distances from `i`.
pub fn calibrate_row(d2: &[f64], i: usize, perplexity: f64) -> Calibration {
    let target = perplexity.ln();
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    let mut beta = 1.0;
    let spread = d2.iter().copied().fold(0.0, f64::max);
    if spread > 0.0 {
        beta = 1.0 / spread;
    }
    let (mut probs, mut entropy) = row_distribution(d2, i, beta);
    for _ in 0..200 {
        let diff = entropy - target;
        if diff.abs() < ENTROPY_TOLERANCE {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() {
                (beta + hi) / 2.0
            } else {
                beta * 2.0
            };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
        (probs, entropy) = row_distribution(d2, i, beta);
    }
    Calibration {
        probs,
        beta,
        entropy,
    }
}

fn squared_distances(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    points
        .par_iter()
        .map(|p| {
            points
                .iter()
                .map(|q| p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect()
        })
        .collect()
}

/// Per-point calibrated conditionals `p_{j|i}`.
pub fn conditional_affinities(points: &[Vec<f64>], perplexity: f64) -> Vec<Calibration> {
    let d2 = squared_distances(points);
    d2.par_iter()
        .enumerate()
        .map(|(i, row)| calibrate_row(row, i, perplexity))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TsneResult {
    pub embedding: Vec<[f64; 2]>,
    /// `(iteration, KL(P‖Q))` with the unexaggerated P.
    pub kl_history: Vec<(usize, f64)>,
    /// Entropy of each calibrated conditional, in input order.
    pub entropies: Vec<f64>,
}

fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
                num[i * n + j] = 1.0 / (1.0 + d);
                z += num[i * n + j];
            }
        }
    }
    let mut kl = 0.0;
    for k in 0..n * n {
        if p[k] > 0.0 && num[k] > 0.0 {
            kl += p[k] * (p[k] / (num[k] / z)).ln();
        }
    }
    kl
}

/// Exact t-SNE to two dimensions. Points are processed in a canonical
/// (lexicographic) order, so reordering the input reorders the output the
/// same way.
pub fn tsne(points: &[Vec<f64>], cfg: &TsneConfig) -> Result<TsneResult> {
    let n = points.len();
    cfg.validate(n)?;
    if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(AnalysisError::Data(
            "t-SNE input has non-finite values".into(),
        ));
    }
    if points.iter().all(|p| p == &points[0]) {
        return Err(AnalysisError::Degenerate(
            "all t-SNE input points are identical".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .iter()
            .zip(&points[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sorted: Vec<Vec<f64>> = order.iter().map(|&i| points[i].clone()).collect();

    let cond = conditional_affinities(&sorted, cfg.perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i].probs[j] + cond[j].probs[i]) / (2.0 * n as f64)).max(1e-12);
        }
        p[i * n + i] = 0.0;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0; 2]; n];
    let mut kl_history = Vec::new();
    let mut num = vec![0.0; n * n];
    for iter in 0..cfg.n_iters {
        let early = iter < cfg.exaggeration_iters;
        let exaggeration = if early { cfg.exaggeration } else { 1.0 };
        let momentum = if early { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let d = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
                    num[i * n + j] = 1.0 / (1.0 + d);
                    z += num[i * n + j];
                }
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = (exaggeration * p[i * n + j] - num[i * n + j] / z) * num[i * n + j];
                g[0] += 4.0 * w * (y[i][0] - y[j][0]);
                g[1] += 4.0 * w * (y[i][1] - y[j][1]);
            }
            for k in 0..2 {
                gains[i][k] = if (g[k] > 0.0) != (update[i][k] > 0.0) {
                    gains[i][k] + 0.2
                } else {
                    (gains[i][k] * 0.8f64).max(0.01)
                };
                update[i][k] = momentum * update[i][k] - cfg.learning_rate * gains[i][k] * g[k];
            }
        }
        for (yi, u) in y.iter_mut().zip(&update) {
            yi[0] += u[0];
            yi[1] += u[1];
        }
        let mean = y.iter().fold([0.0; 2], |m, v| [m[0] + v[0], m[1] + v[1]]);
        for yi in &mut y {
            yi[0] -= mean[0] / n as f64;
            yi[1] -= mean[1] / n as f64;
        }
        if (iter + 1) % cfg.kl_every == 0 || iter + 1 == cfg.n_iters {
            kl_history.push((iter + 1, kl_divergence(&p, &y)));
        }
    }

    let mut embedding = vec![[0.0; 2]; n];
    let mut entropies = vec![0.0; n];
    for (k, &i) in order.iter().enumerate() {
        embedding[i] = y[k];
        entropies[i] = cond[k].entropy;
    }
    Ok(TsneResult {
        embedding,
        kl_history,
        entropies,
    })
}

/// Mean fraction of each point's `k` nearest neighbours (by Euclidean
/// distance, self excluded) that share its label.
pub fn knn_purity<L: PartialEq>(points: &[[f64; 2]], labels: &[L], k: usize) -> f64 {
    let n = points.len();
    if n < 2 || k == 0 {
        return 1.0;
    }
    let k = k.min(n - 1);
    let mut total = 0.0;
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                (
                    (points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2),
                    j,
                )
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        total += d[..k]
            .iter()
            .filter(|(_, j)| labels[*j] == labels[i])
            .count() as f64
            / k as f64;
    }
    total / n as f64
}
