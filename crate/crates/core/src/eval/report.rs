//! Per-method metric summaries and the serialized evaluation report.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cluster::Linkage;
use super::fidelity::{auc, fidelity_curve, Direction, FidelityCurve};
use super::localization::{mass_accuracy, rank_accuracy};
use super::median;
use super::ssim::SimilarityMatrix;
use crate::error::{Error, Result};
use crate::image::{AttributionMap, GroundTruthMask, Image, Method};
use crate::model::Model;

/// Raw metric values of one map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub image_id: String,
    pub deletion_auc: f64,
    pub insertion_auc: f64,
    /// `None` when the map has no positive values or no mask was given.
    pub mass_accuracy: Option<f64>,
    pub rank_accuracy: Option<f64>,
}

/// Both curves and the scores of one map.
pub struct ImageEvaluation {
    pub scores: ImageScores,
    pub deletion: FidelityCurve,
    pub insertion: FidelityCurve,
}

/// Scores one map. Localization metrics are skipped without a mask; an
/// undefined mass accuracy becomes `None`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_image<M: Model + ?Sized>(
    model: &M,
    image_id: &str,
    image: &Image,
    class: usize,
    map: &AttributionMap,
    mask: Option<&GroundTruthMask>,
    step_fraction: f64,
) -> Result<ImageEvaluation> {
    let deletion = fidelity_curve(model, image_id, image, class, map, Direction::Deletion, step_fraction)?;
    let insertion = fidelity_curve(model, image_id, image, class, map, Direction::Insertion, step_fraction)?;
    let (mass, rank) = match mask {
        None => (None, None),
        Some(mask) => {
            let mass = match mass_accuracy(map, mask) {
                Ok(v) => Some(v),
                Err(Error::UndefinedMetric(_)) => None,
                Err(e) => return Err(e),
            };
            (mass, Some(rank_accuracy(map, mask)?))
        }
    };
    Ok(ImageEvaluation {
        scores: ImageScores {
            image_id: image_id.to_string(),
            deletion_auc: auc(&deletion)?,
            insertion_auc: auc(&insertion)?,
            mass_accuracy: mass,
            rank_accuracy: rank,
        },
        deletion,
        insertion,
    })
}

/// One evaluation item: id, image, ground-truth class, optional mask.
pub struct EvalItem<'a> {
    pub id: &'a str,
    pub image: &'a Image,
    pub label: usize,
    pub mask: Option<&'a GroundTruthMask>,
}

/// Evaluates aligned items and maps in parallel, results in input order.
pub fn evaluate_maps<M: Model + Sync + ?Sized>(
    model: &M,
    items: &[EvalItem<'_>],
    maps: &[&AttributionMap],
    step_fraction: f64,
) -> Result<Vec<ImageEvaluation>> {
    if items.len() != maps.len() {
        return Err(Error::data(format!("{} images but {} maps", items.len(), maps.len())));
    }
    items
        .par_iter()
        .zip(maps.par_iter())
        .map(|(it, map)| evaluate_image(model, it.id, it.image, it.label, map, it.mask, step_fraction))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub median_deletion_auc: f64,
    pub median_insertion_auc: f64,
    pub median_mass_accuracy: Option<f64>,
    pub median_rank_accuracy: Option<f64>,
    /// Images whose mass accuracy was undefined and left out of the median.
    pub undefined_mass_count: usize,
    pub images: Vec<ImageScores>,
}

impl MethodSummary {
    pub fn from_scores(method: Method, images: Vec<ImageScores>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::data(format!("no scores for method {method}")));
        }
        let col = |f: fn(&ImageScores) -> f64| median(&images.iter().map(f).collect::<Vec<_>>()).unwrap();
        let opt = |f: fn(&ImageScores) -> Option<f64>| median(&images.iter().filter_map(f).collect::<Vec<_>>());
        let has_masks = images.iter().any(|s| s.rank_accuracy.is_some());
        let undefined = if has_masks {
            images.iter().filter(|s| s.mass_accuracy.is_none()).count()
        } else {
            0
        };
        if undefined > 0 {
            log::warn!("{method}: mass accuracy undefined for {undefined} image(s), excluded from the median");
        }
        Ok(Self {
            method,
            median_deletion_auc: col(|s| s.deletion_auc),
            median_insertion_auc: col(|s| s.insertion_auc),
            median_mass_accuracy: opt(|s| s.mass_accuracy),
            median_rank_accuracy: opt(|s| s.rank_accuracy),
            undefined_mass_count: undefined,
            images,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Provenance: checkpoint, dataset fingerprint, flags.
    pub manifest: BTreeMap<String, String>,
    pub step_fraction: f64,
    pub methods: Vec<MethodSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<SimilarityMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linkage: Option<Linkage>,
}

impl EvalReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::data(format!("bad report: {e}")))
    }

    /// Fixed-width table, one row per method.
    pub fn table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
        let mut out = format!(
            "{:<12} {:>10} {:>11} {:>10} {:>10}\n",
            "Method", "Deletion ↓", "Insertion ↑", "Mass ↑", "Rank ↑"
        );
        for m in &self.methods {
            out.push_str(&format!(
                "{:<12} {:>10} {:>11} {:>10} {:>10}\n",
                m.method.label(),
                cell(Some(m.median_deletion_auc)),
                cell(Some(m.median_insertion_auc)),
                cell(m.median_mass_accuracy),
                cell(m.median_rank_accuracy)
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearModel;

    fn scores(id: &str, d: f64, i: f64, mass: Option<f64>, rank: Option<f64>) -> ImageScores {
        ImageScores {
            image_id: id.into(),
            deletion_auc: d,
            insertion_auc: i,
            mass_accuracy: mass,
            rank_accuracy: rank,
        }
    }

    #[test]
    fn summary_medians_skip_undefined_mass() {
        let s = MethodSummary::from_scores(
            Method::Saliency,
            vec![
                scores("a", 0.2, 0.5, Some(0.1), Some(0.5)),
                scores("b", 0.4, 0.7, None, Some(0.25)),
                scores("c", 0.9, 0.6, Some(0.3), Some(1.0)),
            ],
        )
        .unwrap();
        assert_eq!(s.median_deletion_auc, 0.4);
        assert_eq!(s.median_insertion_auc, 0.6);
        assert_eq!(s.median_mass_accuracy, Some(0.2));
        assert_eq!(s.median_rank_accuracy, Some(0.5));
        assert_eq!(s.undefined_mass_count, 1);
    }

    #[test]
    fn report_round_trips_through_json() {
        let s = MethodSummary::from_scores(Method::Pcim, vec![scores("a", 0.1, 0.9, None, None)]).unwrap();
        let r = EvalReport {
            manifest: BTreeMap::from([("seed".to_string(), "1".to_string())]),
            step_fraction: 0.02,
            methods: vec![s],
            similarity: None,
            linkage: None,
        };
        assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
        let table = r.table();
        let header = table.lines().next().unwrap();
        assert!(header.find("Deletion").unwrap() < header.find("Insertion").unwrap());
        assert!(table.contains("PCIM") && table.contains("n/a"));
    }

    #[test]
    fn map_equal_to_mask_localizes_perfectly() {
        let m = LinearModel::mean_pixel(4, 4).unwrap();
        let cells: Vec<bool> = (0..16).map(|i| i % 3 == 0).collect();
        let mask = GroundTruthMask::new(4, 4, cells.clone()).unwrap();
        let map = AttributionMap::new(4, 4, cells.iter().map(|&c| c as u8 as f32).collect(), Method::Pcim).unwrap();
        let img = Image::new(4, 4, vec![0.5; 16]).unwrap();
        let e = evaluate_image(&m, "x", &img, 1, &map, Some(&mask), 0.1).unwrap();
        assert_eq!(e.scores.mass_accuracy, Some(1.0));
        assert_eq!(e.scores.rank_accuracy, Some(1.0));
    }
}
