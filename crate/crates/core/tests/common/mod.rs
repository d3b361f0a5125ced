//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::BTreeSet;

/// O(N^2) DBSCAN by union-find over core points.
///
/// Returns labels normalized to the order in which each cluster's smallest
/// core index appears, and per-point roles (0 core, 1 border, 2 noise).
pub fn reference_dbscan(
    points: &[Vec<f64>],
    eps: f64,
    min_pts: usize,
) -> (Vec<Option<usize>>, Vec<u8>) {
    let n = points.len();
    let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let within = |i: usize, j: usize| d2(&points[i], &points[j]) <= eps * eps;
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| within(i, j)).count() >= min_pts)
        .collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let next = p[c];
            p[c] = r;
            c = next;
        }
        r
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if core[i] && core[j] && within(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    // Number clusters by smallest core index.
    let mut root_ids: Vec<(usize, usize)> = Vec::new();
    let mut core_label = vec![None; n];
    for i in 0..n {
        if core[i] {
            let r = find(&mut parent, i);
            let id = match root_ids.iter().find(|(root, _)| *root == r) {
                Some((_, id)) => *id,
                None => {
                    root_ids.push((r, root_ids.len()));
                    root_ids.len() - 1
                }
            };
            core_label[i] = Some(id);
        }
    }
    let mut labels = core_label.clone();
    let mut roles = vec![2u8; n];
    for i in 0..n {
        if core[i] {
            roles[i] = 0;
            continue;
        }
        let best = (0..n)
            .filter(|&j| core[j] && within(i, j))
            .filter_map(|j| core_label[j])
            .min();
        if let Some(id) = best {
            labels[i] = Some(id);
            roles[i] = 1;
        }
    }
    (labels, roles)
}

/// Sizes of 8-connected components by iterative flood fill, sorted.
pub fn flood_fill_areas(mask: &[bool], h: usize, w: usize) -> Vec<usize> {
    let mut seen = vec![false; h * w];
    let mut areas = Vec::new();
    for s in 0..h * w {
        if !mask[s] || seen[s] {
            continue;
        }
        let mut stack = vec![s];
        seen[s] = true;
        let mut area = 0;
        while let Some(p) = stack.pop() {
            area += 1;
            let (y, x) = ((p / w) as i64, (p % w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy >= 0 && xx >= 0 && yy < h as i64 && xx < w as i64 {
                        let q = yy as usize * w + xx as usize;
                        if mask[q] && !seen[q] {
                            seen[q] = true;
                            stack.push(q);
                        }
                    }
                }
            }
        }
        areas.push(area);
    }
    areas.sort_unstable();
    areas
}

/// Min (erode) or max (dilate) filter over in-bounds pixels of a square window.
pub fn minmax_filter(mask: &[bool], h: usize, w: usize, k: usize, erode: bool) -> Vec<bool> {
    let r = (k / 2) as i64;
    (0..h * w)
        .map(|p| {
            let (y, x) = ((p / w) as i64, (p % w) as i64);
            let mut vals = Vec::new();
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy >= 0 && xx >= 0 && yy < h as i64 && xx < w as i64 {
                        vals.push(mask[yy as usize * w + xx as usize]);
                    }
                }
            }
            if erode {
                vals.iter().all(|v| *v)
            } else {
                vals.iter().any(|v| *v)
            }
        })
        .collect()
}

/// Median filter by full sort with reflect-101 borders.
pub fn naive_median(values: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let reflect = |i: i64, n: usize| -> usize {
        let n = n as i64;
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i } else { 2 * (n - 1) - i };
        }
        i as usize
    };
    let r = (k / 2) as i64;
    (0..h * w)
        .map(|p| {
            let (y, x) = ((p / w) as i64, (p % w) as i64);
            let mut win: Vec<f64> = Vec::new();
            for dy in -r..=r {
                for dx in -r..=r {
                    win.push(values[reflect(y + dy, h) * w + reflect(x + dx, w)]);
                }
            }
            win.sort_by(f64::total_cmp);
            win[win.len() / 2]
        })
        .collect()
}

/// Average precision by enumerating every distinct score as a threshold,
/// counting predictions from scratch each time.
pub fn brute_force_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let thresholds: BTreeSet<u64> = scores.iter().map(|s| s.to_bits()).collect();
    let mut ts: Vec<f64> = thresholds.into_iter().map(f64::from_bits).collect();
    ts.sort_by(|a, b| b.total_cmp(a));
    let positives = labels.iter().filter(|l| **l).count() as f64;
    let mut prev_r = 0.0;
    let mut ap = 0.0;
    for t in ts {
        let tp = scores
            .iter()
            .zip(labels)
            .filter(|(s, l)| **s >= t && **l)
            .count() as f64;
        let pp = scores.iter().filter(|s| **s >= t).count() as f64;
        let r = tp / positives;
        ap += (r - prev_r) * (tp / pp);
        prev_r = r;
    }
    ap
}

/// Convex hull (Andrew's monotone chain), counter-clockwise.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &q in &p {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], q) <= 0.0 {
            lower.pop();
        }
        lower.push(q);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &q in p.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], q) <= 0.0 {
            upper.pop();
        }
        upper.push(q);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Whether two convex polygons are disjoint, by the separating axis theorem.
pub fn hulls_disjoint(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    let axes = |poly: &[[f64; 2]]| -> Vec<[f64; 2]> {
        (0..poly.len())
            .map(|i| {
                let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
                [-(q[1] - p[1]), q[0] - p[0]]
            })
            .collect()
    };
    let project = |poly: &[[f64; 2]], ax: [f64; 2]| {
        poly.iter()
            .map(|p| p[0] * ax[0] + p[1] * ax[1])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    };
    axes(a).into_iter().chain(axes(b)).any(|ax| {
        let (a0, a1) = project(a, ax);
        let (b0, b1) = project(b, ax);
        a1 < b0 || b1 < a0
    })
}

/// Two isotropic Gaussian blobs in `dim` dimensions, `n` points each,
/// centres `separation` apart along the first axis.
pub fn two_blobs(seed: u64, n: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..2 * n)
        .map(|i| {
            (0..dim)
                .map(|k| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z + if k == 0 && i >= n { separation } else { 0.0 }
                })
                .collect()
        })
        .collect()
}
