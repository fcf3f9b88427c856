//! Relevance mass and relevance rank accuracy against a ground-truth mask.

use super::fidelity::pixel_order;
use crate::error::{Error, Result};
use crate::image::{AttributionMap, GroundTruthMask};

fn check_dims(map: &AttributionMap, mask: &GroundTruthMask) -> Result<()> {
    if map.dims() != mask.dims() {
        return Err(Error::dim(format!(
            "map {:?} does not match mask {:?}",
            map.dims(),
            mask.dims()
        )));
    }
    Ok(())
}

/// Share of the positive attribution mass that falls inside the mask.
pub fn mass_accuracy(map: &AttributionMap, mask: &GroundTruthMask) -> Result<f64> {
    check_dims(map, mask)?;
    let (mut inside, mut total) = (0.0f64, 0.0f64);
    for (&v, &m) in map.values().iter().zip(mask.cells()) {
        if v > 0.0 {
            total += v as f64;
            if m {
                inside += v as f64;
            }
        }
    }
    if total <= 0.0 {
        return Err(Error::UndefinedMetric("map has no positive attributions".into()));
    }
    Ok(inside / total)
}

/// Fraction of the `k` highest-ranked pixels that lie inside a mask of `k`
/// pixels. Ties rank by row-major index.
pub fn rank_accuracy(map: &AttributionMap, mask: &GroundTruthMask) -> Result<f64> {
    check_dims(map, mask)?;
    let k = mask.positive_count();
    if k == 0 {
        return Err(Error::data("rank accuracy needs a mask with at least one positive pixel"));
    }
    let hits = pixel_order(map.values())
        .into_iter()
        .take(k)
        .filter(|&i| mask.cells()[i])
        .count();
    Ok(hits as f64 / k as f64)
}
