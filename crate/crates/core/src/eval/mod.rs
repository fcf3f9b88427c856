//! Quantitative comparison of attribution maps.

mod cluster;
mod fidelity;
mod localization;
mod report;
mod ssim;

pub use cluster::{cluster_methods, Linkage, Merge};
pub use fidelity::{
    auc, deletion_curve, fidelity_curve, insertion_curve, median_auc, pixel_order, step_size, Direction, FidelityCurve,
};
pub use localization::{mass_accuracy, rank_accuracy};
pub use report::{evaluate_image, evaluate_maps, EvalItem, EvalReport, ImageEvaluation, ImageScores, MethodSummary};
pub use ssim::{similarity_matrix, ssim, ssim_values, SimilarityMatrix, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};

/// Median of finite values; the mean of the middle two for an even count.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}
