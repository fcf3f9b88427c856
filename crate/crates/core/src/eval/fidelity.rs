//! Deletion and insertion curves.

use serde::{Deserialize, Serialize};

use super::median;
use crate::error::{Error, Result};
use crate::image::{AttributionMap, Image, Method};
use crate::model::{predict, Model};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Start from the image and blank pixels to 0 in attribution order.
    Deletion,
    /// Start from the all-zero image and reveal pixels in attribution order.
    Insertion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityCurve {
    pub direction: Direction,
    pub image_id: String,
    pub method: Method,
    /// `(fraction perturbed, probability of the tracked class)`.
    pub points: Vec<(f64, f64)>,
}

impl FidelityCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,probability\n");
        for (f, p) in &self.points {
            out.push_str(&format!("{f},{p}\n"));
        }
        out
    }
}

/// Pixel indices by descending attribution; ties keep row-major order.
pub fn pixel_order(values: &[f32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Pixels perturbed per step: `ceil(step_fraction * p)`, at least one.
pub fn step_size(step_fraction: f64, p: usize) -> usize {
    // Guard against `1/9 * 9` landing a hair above an integer.
    ((step_fraction * p as f64 - 1e-9).ceil() as usize).max(1)
}

/// Curve of the probability of `class` as pixels are removed or revealed in
/// order of decreasing attribution.
#[allow(clippy::too_many_arguments)]
pub fn fidelity_curve<M: Model + ?Sized>(
    model: &M,
    image_id: &str,
    image: &Image,
    class: usize,
    map: &AttributionMap,
    direction: Direction,
    step_fraction: f64,
) -> Result<FidelityCurve> {
    if !(step_fraction > 0.0 && step_fraction <= 0.5) {
        return Err(Error::config(format!("step fraction must lie in (0, 0.5], got {step_fraction}")));
    }
    if map.dims() != image.dims() {
        return Err(Error::dim(format!(
            "map {:?} does not match image {:?}",
            map.dims(),
            image.dims()
        )));
    }
    if class >= model.num_classes() {
        return Err(Error::dim(format!("class {class} outside {} classes", model.num_classes())));
    }
    let (h, w) = image.dims();
    let p = image.len();
    let step = step_size(step_fraction, p);
    let order = pixel_order(map.values());

    let mut current = match direction {
        Direction::Deletion => image.pixels().to_vec(),
        Direction::Insertion => vec![0.0; p],
    };
    let mut frames = current.clone();
    let mut fractions = vec![0.0];
    let mut done = 0;
    while done < p {
        let next = (done + step).min(p);
        for &i in &order[done..next] {
            current[i] = match direction {
                Direction::Deletion => 0.0,
                Direction::Insertion => image.pixels()[i],
            };
        }
        done = next;
        frames.extend_from_slice(&current);
        fractions.push(done as f64 / p as f64);
    }

    let n = fractions.len();
    let mut probs = Vec::with_capacity(n);
    const CHUNK: usize = 64;
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let batch = Tensor::new(vec![end - start, 1, h, w], frames[start * p..end * p].to_vec())?;
        let out = predict(model, &batch)?;
        probs.extend((0..out.batch()).map(|r| out.row(r)[class] as f64));
    }
    Ok(FidelityCurve {
        direction,
        image_id: image_id.to_string(),
        method: map.method(),
        points: fractions.into_iter().zip(probs).collect(),
    })
}

pub fn deletion_curve<M: Model + ?Sized>(
    model: &M,
    image_id: &str,
    image: &Image,
    class: usize,
    map: &AttributionMap,
    step_fraction: f64,
) -> Result<FidelityCurve> {
    fidelity_curve(model, image_id, image, class, map, Direction::Deletion, step_fraction)
}

pub fn insertion_curve<M: Model + ?Sized>(
    model: &M,
    image_id: &str,
    image: &Image,
    class: usize,
    map: &AttributionMap,
    step_fraction: f64,
) -> Result<FidelityCurve> {
    fidelity_curve(model, image_id, image, class, map, Direction::Insertion, step_fraction)
}

/// Trapezoidal area under the curve over the fraction axis.
pub fn auc(curve: &FidelityCurve) -> Result<f64> {
    if curve.points.len() < 2 {
        return Err(Error::data("an AUC needs at least two curve points"));
    }
    let area = curve
        .points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum::<f64>();
    let span = curve.points.last().unwrap().0 - curve.points[0].0;
    Ok(area / span)
}

/// Median AUC over aligned `(id, image, class)` items and their maps.
pub fn median_auc<M: Model + ?Sized>(
    model: &M,
    items: &[(&str, &Image, usize)],
    maps: &[&AttributionMap],
    direction: Direction,
    step_fraction: f64,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::data("median AUC over an empty set"));
    }
    if items.len() != maps.len() {
        return Err(Error::data(format!("{} images but {} maps", items.len(), maps.len())));
    }
    let aucs = items
        .iter()
        .zip(maps)
        .map(|(&(id, img, class), map)| auc(&fidelity_curve(model, id, img, class, map, direction, step_fraction)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(median(&aucs).expect("non-empty"))
}
