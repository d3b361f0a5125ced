use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{sq_dist, EmbeddingSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Exact t-SNE settings. Defaults are the reference algorithm's values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub min_gain: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            min_gain: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TsneResult<T> {
    pub embedding: EmbeddingSet<T>,
    /// Achieved perplexity of each conditional row after calibration.
    pub row_perplexities: Vec<f64>,
    /// KL(P || Q) after every iteration, against the unexaggerated P.
    pub kl_trace: Vec<f64>,
}

const ENTROPY_TOL: f64 = 1e-10;
const MAX_BISECTIONS: usize = 200;

/// Row-stochastic conditional affinities `p_{j|i}` (row-major `N x N`, zero
/// diagonal) whose rows each have the requested perplexity, plus the
/// achieved perplexity of every row.
pub fn conditional_probabilities<T: Scalar>(
    points: &EmbeddingSet<T>,
    perplexity: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = points.len();
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut achieved = vec![0.0; n];
    let mut dist = vec![0.0; n];
    for i in 0..n {
        for (j, d) in dist.iter_mut().enumerate() {
            *d = if i == j {
                0.0
            } else {
                sq_dist(points.point(i), points.point(j))
            };
        }
        let dmin = (0..n)
            .filter(|&j| j != i)
            .map(|j| dist[j])
            .fold(f64::INFINITY, f64::min);
        let row = &mut p[i * n..(i + 1) * n];
        // Entropy (nats) of the row at precision beta; fills `row`.
        let eval = |beta: f64, row: &mut [f64]| -> f64 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                let v = if j == i {
                    0.0
                } else {
                    (-(dist[j] - dmin) * beta).exp()
                };
                row[j] = v;
                sum += v;
                weighted += v * (dist[j] - dmin);
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
            sum.ln() + beta * weighted / sum
        };
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        let mut h = eval(beta, row);
        for _ in 0..MAX_BISECTIONS {
            let diff = h - target;
            if diff.abs() < ENTROPY_TOL {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() {
                    0.5 * (beta + hi)
                } else {
                    beta * 2.0
                };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
            h = eval(beta, row);
        }
        achieved[i] = h.exp();
    }
    Ok((p, achieved))
}

/// Symmetrized joint affinities `(p_{j|i} + p_{i|j}) / 2N`; sums to 1.
pub fn joint_probabilities(conditional: &[f64], n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (conditional[i * n + j] + conditional[j * n + i]) / (2.0 * n as f64);
        }
    }
    p
}

/// Exact (O(N^2) per iteration) t-SNE to two dimensions.
pub fn tsne_reduce<T: Scalar>(
    points: &EmbeddingSet<T>,
    config: &TsneConfig,
) -> Result<TsneResult<T>> {
    let n = points.len();
    if n < 10 {
        return Err(Error::invalid(format!(
            "t-SNE needs at least 10 points, got {n}"
        )));
    }
    if !(config.perplexity > 1.0 && config.perplexity < n as f64 / 3.0) {
        return Err(Error::invalid(format!(
            "perplexity {} must lie in (1, N/3) = (1, {:.3})",
            config.perplexity,
            n as f64 / 3.0
        )));
    }
    let (cond, row_perplexities) = conditional_probabilities(points, config.perplexity)?;
    let p: Vec<f64> = joint_probabilities(&cond, n)
        .into_iter()
        .map(|v| v.max(1e-12))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = Normal::new(0.0, 1e-4).expect("positive std");
    let mut y: Vec<f64> = (0..2 * n).map(|_| init.sample(&mut rng)).collect();
    let mut update = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut grad = vec![0.0; 2 * n];
    let mut num = vec![0.0; n * n];
    let mut kl_trace = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let exaggeration = if it < config.exaggeration_iterations {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < config.momentum_switch {
            config.initial_momentum
        } else {
            config.final_momentum
        };

        let mut z = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                num[j * n + i] = v;
                z += 2.0 * v;
            }
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let coef = (exaggeration * p[i * n + j] - w / z) * w;
                gx += coef * (y[2 * i] - y[2 * j]);
                gy += coef * (y[2 * i + 1] - y[2 * j + 1]);
            }
            grad[2 * i] = 4.0 * gx;
            grad[2 * i + 1] = 4.0 * gy;
        }
        for k in 0..2 * n {
            let same_sign = (grad[k] > 0.0) == (update[k] > 0.0);
            gains[k] = if same_sign {
                gains[k] * 0.8
            } else {
                gains[k] + 0.2
            };
            gains[k] = gains[k].max(config.min_gain);
            update[k] = momentum * update[k] - config.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        let (mx, my) = (0..n).fold((0.0, 0.0), |(a, b), i| (a + y[2 * i], b + y[2 * i + 1]));
        for i in 0..n {
            y[2 * i] -= mx / n as f64;
            y[2 * i + 1] -= my / n as f64;
        }
        kl_trace.push(kl_divergence(&p, &y, n));
    }

    let embedding =
        EmbeddingSet::new(2, y.into_iter().map(T::of).collect(), points.ids().to_vec())?;
    Ok(TsneResult {
        embedding,
        row_perplexities,
        kl_trace,
    })
}

fn kl_divergence(p: &[f64], y: &[f64], n: usize) -> f64 {
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                z += 1.0 / (1.0 + dx * dx + dy * dy);
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let dx = y[2 * i] - y[2 * j];
            let dy = y[2 * i + 1] - y[2 * j + 1];
            let q = (1.0 / (1.0 + dx * dx + dy * dy) / z).max(1e-12);
            let pij = p[i * n + j];
            kl += pij * (pij / q).ln();
        }
    }
    kl
}
