//! Running any attribution method by tag over a frozen model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{grad_cam, grad_cam_pp, integrated_gradients, random_attribution, rise, saliency, IgConfig, RiseConfig};
use crate::error::{Error, Result};
use crate::image::{AttributionMap, Image, Method};
use crate::model::{Model, ScoreKind};
use crate::pcim::{extract_map, fit_mixing, FitConfig};

/// Settings for every method.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionConfig {
    pub pcim: FitConfig,
    pub saliency_score: ScoreKind,
    pub cam_score: ScoreKind,
    pub ig: IgConfig,
    pub rise: RiseConfig,
    /// Base seed of the random control; mixed with the image id.
    pub random_seed: u64,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            pcim: FitConfig::default(),
            saliency_score: ScoreKind::Probability,
            cam_score: ScoreKind::Logit,
            ig: IgConfig::default(),
            rise: RiseConfig::default(),
            random_seed: 0,
        }
    }
}

/// Per-image seed: `base` xor the first 8 bytes of SHA-256(id).
pub fn image_seed(base: u64, image_id: &str) -> u64 {
    let d = Sha256::digest(image_id.as_bytes());
    base ^ u64::from_le_bytes(d[..8].try_into().unwrap())
}

pub fn attribute<M: Model + ?Sized>(
    model: &M,
    method: Method,
    image_id: &str,
    image: &Image,
    class: usize,
    config: &AttributionConfig,
) -> Result<AttributionMap> {
    if !model.is_frozen() {
        return Err(Error::State("attribution needs a frozen network".into()));
    }
    let (h, w) = image.dims();
    match method {
        Method::Pcim => extract_map(&fit_mixing(model, image_id, image, class, &config.pcim)?, h, w),
        Method::Saliency => saliency(model, image, class, config.saliency_score),
        Method::Rise => rise(model, image, class, &config.rise),
        Method::GradCam => grad_cam(model, image, class, config.cam_score),
        Method::GradCamPp => grad_cam_pp(model, image, class, config.cam_score),
        Method::IntGrads => integrated_gradients(model, image, class, &config.ig),
        Method::Random => {
            if class >= model.num_classes() {
                return Err(Error::dim(format!("class {class} outside {} classes", model.num_classes())));
            }
            random_attribution(image, image_seed(config.random_seed, image_id))
        }
    }
}

/// Maps for every `(id, image, class)` item and method, `out[item][method]`.
/// Items run in parallel.
pub fn attribute_many<M: Model + ?Sized>(
    model: &M,
    methods: &[Method],
    items: &[(&str, &Image, usize)],
    config: &AttributionConfig,
) -> Result<Vec<Vec<AttributionMap>>> {
    items
        .par_iter()
        .map(|&(id, img, class)| methods.iter().map(|&m| attribute(model, m, id, img, class, config)).collect())
        .collect()
}
