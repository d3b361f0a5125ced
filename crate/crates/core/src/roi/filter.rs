use serde::{Deserialize, Serialize};

use super::AnomalyHeatmap;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major binary image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("mask", height * width, data.len()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let data = (0..height * width)
            .map(|i| f(i / width, i % width))
            .collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.width + c]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphOp {
    Erode,
    Dilate,
}

fn check_odd(kernel: usize, what: &str) -> Result<()> {
    if kernel < 3 || kernel % 2 == 0 {
        return Err(Error::invalid(format!(
            "{what} kernel must be odd and >= 3, got {kernel}"
        )));
    }
    Ok(())
}

/// Reflect-101 index (`-1 -> 1`, `n -> n - 2`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Median over each `kernel x kernel` window with reflected borders.
pub fn median_blur<T: Scalar>(map: &AnomalyHeatmap<T>, kernel: usize) -> Result<AnomalyHeatmap<T>> {
    check_odd(kernel, "median")?;
    let (h, w) = (map.height(), map.width());
    let r = (kernel / 2) as isize;
    let mut window = Vec::with_capacity(kernel * kernel);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            window.clear();
            for dy in -r..=r {
                let yy = reflect(y + dy, h);
                for dx in -r..=r {
                    window.push(map.values()[yy * w + reflect(x + dx, w)]);
                }
            }
            let mid = window.len() / 2;
            let (_, m, _) = window
                .select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).expect("finite heatmap"));
            out.push(*m);
        }
    }
    AnomalyHeatmap::new(h, w, out, map.id())
}

/// `mask = map > threshold`.
pub fn binarize<T: Scalar>(map: &AnomalyHeatmap<T>, threshold: f64) -> Mask {
    Mask {
        height: map.height(),
        width: map.width(),
        data: map.values().iter().map(|v| v.f64() > threshold).collect(),
    }
}

/// Otsu's threshold over a 256-bin histogram spanning `[min, max]`; returns
/// the upper edge of the last bin in the lower class.
pub fn otsu_threshold<T: Scalar>(map: &AnomalyHeatmap<T>) -> f64 {
    const BINS: usize = 256;
    let vals: Vec<f64> = map.values().iter().map(|v| v.f64()).collect();
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return lo;
    }
    let width = (hi - lo) / BINS as f64;
    let mut hist = [0usize; BINS];
    for v in &vals {
        hist[(((v - lo) / width) as usize).min(BINS - 1)] += 1;
    }
    let total = vals.len() as f64;
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_var) = (0, -1.0);
    for (i, &c) in hist.iter().enumerate().take(BINS - 1) {
        w0 += c as f64;
        sum0 += i as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (sum0 / w0, (sum_all - sum0) / w1);
        let var = w0 * w1 * (m0 - m1).powi(2);
        if var > best_var {
            best_var = var;
            best = i;
        }
    }
    lo + (best + 1) as f64 * width
}

/// Binary erosion or dilation with a square element. Pixels outside the
/// image are ignored, so a full mask survives erosion unchanged.
pub fn morph(mask: &Mask, op: MorphOp, kernel: usize, iterations: usize) -> Result<Mask> {
    check_odd(kernel, "morphology")?;
    let (h, w) = (mask.height, mask.width);
    let r = kernel / 2;
    let mut cur = mask.clone();
    for _ in 0..iterations {
        let data = (0..h * w)
            .map(|i| {
                let (y, x) = (i / w, i % w);
                let rows = y.saturating_sub(r)..(y + r + 1).min(h);
                let mut window = rows.flat_map(|yy| {
                    (x.saturating_sub(r)..(x + r + 1).min(w)).map(move |xx| (yy, xx))
                });
                match op {
                    MorphOp::Erode => window.all(|(yy, xx)| cur.get(yy, xx)),
                    MorphOp::Dilate => window.any(|(yy, xx)| cur.get(yy, xx)),
                }
            })
            .collect();
        cur = Mask {
            height: h,
            width: w,
            data,
        };
    }
    Ok(cur)
}

/// Erosion followed by dilation, each repeated `iterations` times.
pub fn open(mask: &Mask, kernel: usize, iterations: usize) -> Result<Mask> {
    let eroded = morph(mask, MorphOp::Erode, kernel, iterations)?;
    morph(&eroded, MorphOp::Dilate, kernel, iterations)
}
