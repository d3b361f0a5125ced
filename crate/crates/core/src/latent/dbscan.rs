use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{sq_dist, EmbeddingSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    pub epsilon: f64,
    /// Neighbors (self included) required within `epsilon` for a core point.
    pub min_pts: usize,
}

impl DbscanParams {
    pub fn new(epsilon: f64, min_pts: usize) -> Result<Self> {
        let p = Self { epsilon, min_pts };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) || self.min_pts == 0 {
            return Err(Error::invalid(format!(
                "invalid DBSCAN parameters {self:?}"
            )));
        }
        Ok(())
    }

    /// `min_pts = 2 * dim`, epsilon from the k-distance elbow with
    /// `k = min_pts - 1` (self excluded).
    pub fn heuristic<T: Scalar>(points: &EmbeddingSet<T>) -> Result<(Self, KDistance)> {
        let min_pts = 2 * points.dim();
        let kd = k_distance_epsilon(points, (min_pts - 1).max(1))?;
        if kd.degenerate {
            return Err(Error::invalid(
                "k-distance curve is degenerate (all points coincide)",
            ));
        }
        Ok((Self::new(kd.epsilon, min_pts)?, kd))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointRole {
    Core,
    Border,
    Noise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// Cluster id per point, `None` for noise.
    pub labels: Vec<Option<usize>>,
    pub roles: Vec<PointRole>,
}

impl ClusterAssignment {
    pub fn n_clusters(&self) -> usize {
        self.labels.iter().flatten().max().map_or(0, |m| m + 1)
    }

    pub fn noise_count(&self) -> usize {
        self.roles
            .iter()
            .filter(|r| **r == PointRole::Noise)
            .count()
    }
}

fn neighborhoods<T: Scalar>(points: &EmbeddingSet<T>, eps: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let eps2 = eps * eps;
    let mut nb = vec![Vec::new(); n];
    for i in 0..n {
        nb[i].push(i);
        for j in (i + 1)..n {
            if sq_dist(points.point(i), points.point(j)) <= eps2 {
                nb[i].push(j);
                nb[j].push(i);
            }
        }
    }
    for list in &mut nb {
        list.sort_unstable();
    }
    nb
}

/// DBSCAN with inclusive `<= epsilon` neighborhoods that count the point
/// itself.
///
/// Points are visited in index order, so cluster ids follow the smallest
/// core index of each cluster; a border point reachable from several clusters
/// joins the lowest-numbered one.
pub fn dbscan<T: Scalar>(
    points: &EmbeddingSet<T>,
    params: DbscanParams,
) -> Result<ClusterAssignment> {
    params.validate()?;
    let n = points.len();
    let nb = neighborhoods(points, params.epsilon);
    let is_core: Vec<bool> = nb.iter().map(|l| l.len() >= params.min_pts).collect();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if labels[start].is_some() || !is_core[start] {
            continue;
        }
        let id = next;
        next += 1;
        labels[start] = Some(id);
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for &q in &nb[p] {
                if labels[q].is_none() {
                    labels[q] = Some(id);
                    if is_core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    let roles = (0..n)
        .map(|i| match (is_core[i], labels[i]) {
            (true, _) => PointRole::Core,
            (false, Some(_)) => PointRole::Border,
            (false, None) => PointRole::Noise,
        })
        .collect();
    Ok(ClusterAssignment { labels, roles })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KDistance {
    pub epsilon: f64,
    /// All points coincide; `epsilon` is 0 and unusable for DBSCAN.
    pub degenerate: bool,
    pub elbow_index: usize,
    /// Each point's distance to its k-th nearest neighbor, largest first.
    pub sorted_distances: Vec<f64>,
}

/// Elbow of the descending k-distance curve.
///
/// Both axes are rescaled to `[0, 1]` and the elbow is the point farthest
/// from the chord joining the curve's endpoints; its k-distance is returned.
pub fn k_distance_epsilon<T: Scalar>(points: &EmbeddingSet<T>, k: usize) -> Result<KDistance> {
    let n = points.len();
    if k == 0 || n <= k {
        return Err(Error::invalid(format!(
            "k-distance needs N > k >= 1, got N = {n}, k = {k}"
        )));
    }
    let mut kd: Vec<f64> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| sq_dist(points.point(i), points.point(j)))
                .collect();
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            kth.sqrt()
        })
        .collect();
    kd.sort_by(|a, b| b.total_cmp(a));
    let (top, bottom) = (kd[0], kd[n - 1]);
    if top == 0.0 {
        return Ok(KDistance {
            epsilon: 0.0,
            degenerate: true,
            elbow_index: 0,
            sorted_distances: kd,
        });
    }
    let span_y = top - bottom;
    let mut best = (0usize, -1.0f64);
    if span_y > 0.0 && n > 1 {
        // Chord from (0, 1) to (1, 0) in normalized coordinates: x + y = 1.
        for (i, &d) in kd.iter().enumerate() {
            let x = i as f64 / (n - 1) as f64;
            let y = (d - bottom) / span_y;
            let dist = (1.0 - x - y).abs() / std::f64::consts::SQRT_2;
            if dist > best.1 {
                best = (i, dist);
            }
        }
    }
    Ok(KDistance {
        epsilon: kd[best.0],
        degenerate: false,
        elbow_index: best.0,
        sorted_distances: kd,
    })
}
