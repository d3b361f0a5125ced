use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sq_dist, EmbeddingSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mean held-out log-likelihood of one candidate bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthScore {
    pub bandwidth: f64,
    pub mean_log_likelihood: f64,
}

/// Gaussian product-kernel density estimate with a scalar bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel<T> {
    pub points: EmbeddingSet<T>,
    pub bandwidth: f64,
    /// Cross-validation scores per grid bandwidth, when fitted by [`kde_fit`].
    pub cv_scores: Vec<BandwidthScore>,
}

impl<T: Scalar> KdeModel<T> {
    pub fn new(points: EmbeddingSet<T>, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        if points.is_empty() {
            return Err(Error::Empty("KDE training points"));
        }
        Ok(Self {
            points,
            bandwidth,
            cv_scores: Vec::new(),
        })
    }

    /// `f(x) = 1 / (N h^D) * sum_i prod_k K((x_k - x_ik) / h)` with the
    /// standard normal `K`.
    pub fn density(&self, x: &[T]) -> f64 {
        density(
            self.points.points(),
            self.points.len(),
            self.points.dim(),
            self.bandwidth,
            x,
        )
    }
}

fn density<'a, T: Scalar>(
    train: impl Iterator<Item = &'a [T]>,
    n: usize,
    dim: usize,
    h: f64,
    x: &[T],
) -> f64 {
    let norm = (2.0 * std::f64::consts::PI).powf(dim as f64 / 2.0) * h.powi(dim as i32) * n as f64;
    let inv = 1.0 / (2.0 * h * h);
    train.map(|p| (-sq_dist(p, x) * inv).exp()).sum::<f64>() / norm
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Picks the grid bandwidth with the highest mean held-out log-likelihood
/// over `folds` seeded folds, then fits on all points.
///
/// Densities are evaluated directly, so a held-out point far from every
/// training point under a tiny bandwidth contributes `-inf`.
pub fn kde_fit<T: Scalar>(
    points: &EmbeddingSet<T>,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<KdeModel<T>> {
    let n = points.len();
    if grid.is_empty() || grid.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
        return Err(Error::invalid(
            "bandwidth grid must be non-empty and positive",
        ));
    }
    if folds < 2 || n < folds {
        return Err(Error::invalid(format!(
            "need 2 <= folds <= N, got folds = {folds}, N = {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    let dim = points.dim();
    let scores: Vec<BandwidthScore> = grid
        .iter()
        .map(|&h| {
            let mut total = 0.0;
            for f in 0..folds {
                let train_count = fold_of.iter().filter(|&&k| k != f).count();
                let fold_ll: f64 = (0..n)
                    .filter(|&i| fold_of[i] == f)
                    .map(|i| {
                        let train = (0..n).filter(|&j| fold_of[j] != f).map(|j| points.point(j));
                        density(train, train_count, dim, h, points.point(i)).ln()
                    })
                    .sum();
                total += fold_ll;
            }
            BandwidthScore {
                bandwidth: h,
                mean_log_likelihood: total / folds as f64,
            }
        })
        .collect();
    let best = scores
        .iter()
        .filter(|s| s.mean_log_likelihood.is_finite())
        .fold(None::<&BandwidthScore>, |acc, s| match acc {
            Some(b) if b.mean_log_likelihood >= s.mean_log_likelihood => Some(b),
            _ => Some(s),
        })
        .ok_or_else(|| {
            Error::Bandwidth(format!(
                "held-out likelihood is zero for every bandwidth in [{:.3e}, {:.3e}]; widen the grid toward larger values",
                grid.iter().cloned().fold(f64::INFINITY, f64::min),
                grid.iter().cloned().fold(0.0, f64::max)
            ))
        })?;
    let mut model = KdeModel::new(points.clone(), best.bandwidth)?;
    model.cv_scores = scores;
    Ok(model)
}

/// Density of every query point under `model`.
pub fn kde_score<T: Scalar>(model: &KdeModel<T>, queries: &EmbeddingSet<T>) -> Result<Vec<f64>> {
    if queries.dim() != model.points.dim() {
        return Err(Error::shape("kde_score", model.points.dim(), queries.dim()));
    }
    Ok(queries.points().map(|q| model.density(q)).collect())
}
