use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Flag scores strictly below the threshold.
    Below,
    /// Flag scores strictly above the threshold.
    Above,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PercentileFlags {
    pub flags: Vec<bool>,
    pub threshold: f64,
}

impl PercentileFlags {
    pub fn count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }
}

/// Percentile with linear interpolation between order statistics:
/// rank `p / 100 * (N - 1)`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("percentile of no values"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::invalid(format!("percentile {p} outside [0, 100]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Ok(v[lo] + (rank - lo as f64) * (v[hi] - v[lo]))
}

/// Flags scores strictly past the `p`-th percentile in `direction`.
/// Scores tied with the threshold are never flagged.
pub fn percentile_flag(scores: &[f64], p: f64, direction: Direction) -> Result<PercentileFlags> {
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::invalid(format!(
            "percentile {p} must lie in (0, 100)"
        )));
    }
    let threshold = percentile(scores, p)?;
    let flags = scores
        .iter()
        .map(|&s| match direction {
            Direction::Below => s < threshold,
            Direction::Above => s > threshold,
        })
        .collect();
    Ok(PercentileFlags { flags, threshold })
}
