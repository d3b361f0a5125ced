//! Latent-space density analysis: exact t-SNE reduction, DBSCAN with the
//! k-distance elbow heuristic, Gaussian KDE with cross-validated bandwidth,
//! and percentile flagging.

mod dbscan;
mod embedding;
mod kde;
mod percentile;
mod tsne;

pub use dbscan::{
    dbscan, k_distance_epsilon, ClusterAssignment, DbscanParams, KDistance, PointRole,
};
pub use embedding::EmbeddingSet;
pub use kde::{kde_fit, kde_score, log_grid, BandwidthScore, KdeModel};
pub use percentile::{percentile, percentile_flag, Direction, PercentileFlags};
pub use tsne::{
    conditional_probabilities, joint_probabilities, tsne_reduce, TsneConfig, TsneResult,
};

use crate::scalar::Scalar;

pub(crate) fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x.f64() - y.f64()).powi(2))
        .sum()
}
