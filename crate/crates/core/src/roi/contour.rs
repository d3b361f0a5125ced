use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{AnomalyHeatmap, Mask, PixelBounds};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Inclusive pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    /// Outer boundary as `(row, col)` pixels in clockwise order; the last
    /// pixel is 8-adjacent to the first.
    pub contour: Vec<(usize, usize)>,
    pub area_px: usize,
    pub centroid: (f64, f64),
    pub mean_error: f64,
    pub bbox: BBox,
}

// Clockwise starting at west.
const RING: [(isize, isize); 8] = [
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
];

/// 8-connected component labels in raster order of first pixel; `None` for
/// background.
pub fn label_components(mask: &Mask) -> (Vec<Option<usize>>, usize) {
    let (h, w) = (mask.height(), mask.width());
    let mut labels = vec![None; h * w];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask.data()[start] || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(next);
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            for (dy, dx) in RING {
                let (yy, xx) = (y + dy, x + dx);
                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                    continue;
                }
                let q = yy as usize * w + xx as usize;
                if mask.data()[q] && labels[q].is_none() {
                    labels[q] = Some(next);
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    (labels, next)
}

/// Moore-neighbour trace of the component containing raster-first pixel
/// `start`.
fn trace(labels: &[Option<usize>], h: usize, w: usize, start: usize) -> Vec<(usize, usize)> {
    let id = labels[start];
    let inside = |y: isize, x: isize| {
        y >= 0
            && x >= 0
            && y < h as isize
            && x < w as isize
            && labels[y as usize * w + x as usize] == id
    };
    let s = ((start / w) as isize, (start % w) as isize);
    // Next boundary pixel clockwise from the backtrack direction, and the
    // backtrack direction as seen from that pixel.
    let step = |p: (isize, isize), back: usize| -> Option<((isize, isize), usize)> {
        for k in 1..=8 {
            let d = (back + k) % 8;
            let q = (p.0 + RING[d].0, p.1 + RING[d].1);
            if inside(q.0, q.1) {
                let prev = (back + k - 1) % 8;
                let b = (p.0 + RING[prev].0, p.1 + RING[prev].1);
                let rel = (b.0 - q.0, b.1 - q.1);
                let nb = RING
                    .iter()
                    .position(|&r| r == rel)
                    .expect("ring neighbours are adjacent");
                return Some((q, nb));
            }
        }
        None
    };
    let to_px = |p: (isize, isize)| (p.0 as usize, p.1 as usize);
    let Some(first) = step(s, 0) else {
        return vec![to_px(s)];
    };
    let mut contour = vec![to_px(s)];
    let (mut p, mut back) = first;
    let limit = 4 * h * w + 8;
    for _ in 0..limit {
        let next = step(p, back).expect("connected pixel has a neighbour");
        if p == s && next.0 == first.0 {
            break;
        }
        contour.push(to_px(p));
        (p, back) = next;
    }
    contour
}

/// Connected components of `mask` whose pixel count lies within `bounds`,
/// each scored by the mean heatmap value over its pixels.
pub fn extract_rois<T: Scalar>(
    mask: &Mask,
    map: &AnomalyHeatmap<T>,
    bounds: PixelBounds,
) -> Result<Vec<Roi>> {
    let (h, w) = (mask.height(), mask.width());
    if (map.height(), map.width()) != (h, w) {
        return Err(Error::shape(
            "extract_rois",
            format!("{h}x{w}"),
            format!("{}x{}", map.height(), map.width()),
        ));
    }
    let (labels, n) = label_components(mask);
    struct Acc {
        first: usize,
        area: usize,
        sum_r: f64,
        sum_c: f64,
        sum_e: f64,
        bbox: BBox,
    }
    let mut acc: Vec<Option<Acc>> = (0..n).map(|_| None).collect();
    for (i, l) in labels.iter().enumerate() {
        let Some(l) = *l else { continue };
        let (r, c) = (i / w, i % w);
        let a = acc[l].get_or_insert(Acc {
            first: i,
            area: 0,
            sum_r: 0.0,
            sum_c: 0.0,
            sum_e: 0.0,
            bbox: BBox {
                top: r,
                left: c,
                bottom: r,
                right: c,
            },
        });
        a.area += 1;
        a.sum_r += r as f64;
        a.sum_c += c as f64;
        a.sum_e += map.values()[i].f64();
        a.bbox.top = a.bbox.top.min(r);
        a.bbox.left = a.bbox.left.min(c);
        a.bbox.bottom = a.bbox.bottom.max(r);
        a.bbox.right = a.bbox.right.max(c);
    }
    Ok(acc
        .into_iter()
        .flatten()
        .filter(|a| bounds.contains(a.area))
        .map(|a| {
            let n = a.area as f64;
            Roi {
                contour: trace(&labels, h, w, a.first),
                area_px: a.area,
                centroid: (a.sum_r / n, a.sum_c / n),
                mean_error: a.sum_e / n,
                bbox: a.bbox,
            }
        })
        .collect())
}
