use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{AttributionMap, Image, Method};
use crate::model::{batch_of, score_and_input_gradient, Model, ScoreKind};

/// `|d score / d pixel|`, usually taken on the class probability.
pub fn saliency<M: Model + ?Sized>(model: &M, image: &Image, class: usize, score: ScoreKind) -> Result<AttributionMap> {
    let (h, w) = image.dims();
    let x = batch_of(&[image.pixels()], h, w)?;
    let (_, g) = score_and_input_gradient(model, &x, class, score)?;
    let values = g.data().iter().map(|v| v.abs()).collect();
    AttributionMap::new(h, w, values, Method::Saliency)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IgConfig {
    /// Riemann steps along the path from the black image.
    pub steps: usize,
    pub score: ScoreKind,
    /// Path points evaluated per forward pass.
    pub batch: usize,
}

impl Default for IgConfig {
    fn default() -> Self {
        Self {
            steps: 128,
            score: ScoreKind::Logit,
            batch: 32,
        }
    }
}

/// Right-endpoint Riemann approximation of integrated gradients from the black
/// baseline: `x_i / m * sum_{k=1..m} df/dx_i((k/m) x)`. Signed.
pub fn integrated_gradients<M: Model + ?Sized>(
    model: &M,
    image: &Image,
    class: usize,
    config: &IgConfig,
) -> Result<AttributionMap> {
    if config.steps == 0 || config.batch == 0 {
        return Err(Error::config("integrated gradients needs at least one step and a positive batch"));
    }
    let (h, w) = image.dims();
    let p = image.len();
    let m = config.steps;
    let mut total = vec![0.0f64; p];
    let mut k = 1;
    while k <= m {
        let end = (k + config.batch - 1).min(m);
        let scaled: Vec<Vec<f32>> = (k..=end)
            .map(|j| {
                let t = j as f32 / m as f32;
                image.pixels().iter().map(|&v| t * v).collect()
            })
            .collect();
        let refs: Vec<&[f32]> = scaled.iter().map(Vec::as_slice).collect();
        let batch = batch_of(&refs, h, w)?;
        let (_, g) = score_and_input_gradient(model, &batch, class, config.score)?;
        for r in 0..g.batch() {
            for (acc, &gv) in total.iter_mut().zip(g.row(r)) {
                *acc += gv as f64;
            }
        }
        k = end + 1;
    }
    let values = total
        .iter()
        .zip(image.pixels())
        .map(|(&s, &x)| (x as f64 * s / m as f64) as f32)
        .collect();
    AttributionMap::new(h, w, values, Method::IntGrads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Head, LinearModel};

    fn linear() -> LinearModel {
        LinearModel::new(2, 2, vec![vec![1.0, -2.0, 3.0, 0.0]], vec![0.0], Head::Identity).unwrap()
    }

    #[test]
    fn saliency_of_linear_surrogate_is_abs_weight() {
        let img = Image::new(2, 2, vec![0.3, 0.1, 0.8, 0.5]).unwrap();
        let m = saliency(&linear(), &img, 0, ScoreKind::Probability).unwrap();
        assert_eq!(m.values(), &[1.0, 2.0, 3.0, 0.0]);
    }

    #[test]
    fn saliency_of_constant_model_is_zero() {
        let m = LinearModel::constant(3, 3, &[0.2, 0.8]).unwrap();
        let map = saliency(&m, &Image::new(3, 3, vec![0.4; 9]).unwrap(), 1, ScoreKind::Probability).unwrap();
        assert!(map.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ig_of_linear_model_is_weight_times_input() {
        let img = Image::new(2, 2, vec![0.25, 0.5, 0.75, 1.0]).unwrap();
        for steps in [1, 7, 128] {
            let cfg = IgConfig { steps, ..IgConfig::default() };
            let m = integrated_gradients(&linear(), &img, 0, &cfg).unwrap();
            assert_eq!(m.values(), &[0.25, -1.0, 2.25, 0.0]);
        }
    }

    #[test]
    fn ig_of_black_image_is_zero() {
        let net = crate::network::build_minivgg(16, 16, 2, 1).unwrap();
        let m = integrated_gradients(&net, &Image::zeros(16, 16), 1, &IgConfig { steps: 4, ..Default::default() }).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0));
    }
}
