use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::resize_bilinear;
use crate::error::{Error, Result};
use crate::image::{AttributionMap, Image, Method};
use crate::model::{predict_scores, Model, ScoreKind};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiseConfig {
    pub masks: usize,
    /// Cells per side of the coarse occlusion grid.
    pub grid: usize,
    /// Probability that a grid cell is kept.
    pub keep_probability: f64,
    pub seed: u64,
    pub score: ScoreKind,
    /// Masked images per forward pass.
    pub batch: usize,
}

impl Default for RiseConfig {
    fn default() -> Self {
        Self {
            masks: 4000,
            grid: 7,
            keep_probability: 0.5,
            seed: 0,
            score: ScoreKind::Probability,
            batch: 100,
        }
    }
}

impl RiseConfig {
    fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.masks == 0 || self.batch == 0 {
            return Err(Error::config("RISE needs at least one mask and a positive batch"));
        }
        if self.grid == 0 || self.grid > h.min(w) {
            return Err(Error::config(format!(
                "RISE grid {} must lie in [1, {}]",
                self.grid,
                h.min(w)
            )));
        }
        if !(self.keep_probability > 0.0 && self.keep_probability <= 1.0) {
            return Err(Error::config(format!(
                "RISE keep probability must lie in (0, 1], got {}",
                self.keep_probability
            )));
        }
        if (self.masks as f64) * self.keep_probability < 1.0 {
            log::warn!(
                "RISE with {} masks at keep probability {} expects fewer than one kept cell",
                self.masks,
                self.keep_probability
            );
        }
        Ok(())
    }
}

/// Generate `count` smooth masks: a random binary `grid x grid` pattern,
/// bilinearly upsampled to `(grid + 1)` cells and cropped at a random sub-cell
/// offset. When every cell covers a single pixel the binary pattern is used
/// as is, giving independent per-pixel Bernoulli masks.
pub fn rise_masks(h: usize, w: usize, config: &RiseConfig, rng: &mut impl Rng, count: usize) -> Vec<Vec<f32>> {
    let s = config.grid;
    let (ch, cw) = (h.div_ceil(s), w.div_ceil(s));
    let (uh, uw) = ((s + 1) * ch, (s + 1) * cw);
    (0..count)
        .map(|_| {
            let cells: Vec<f32> = (0..s * s)
                .map(|_| if rng.gen::<f64>() < config.keep_probability { 1.0 } else { 0.0 })
                .collect();
            if ch == 1 && cw == 1 && s == h && s == w {
                return cells;
            }
            let dy = rng.gen_range(0..ch);
            let dx = rng.gen_range(0..cw);
            let up = resize_bilinear(&cells, s, s, uh, uw);
            let mut mask = Vec::with_capacity(h * w);
            for y in 0..h {
                mask.extend_from_slice(&up[(y + dy) * uw + dx..(y + dy) * uw + dx + w]);
            }
            mask
        })
        .collect()
}

/// Randomized input sampling: importance is the score-weighted average of
/// random occlusion masks, normalised by `masks * keep_probability`.
pub fn rise<M: Model + ?Sized>(model: &M, image: &Image, class: usize, config: &RiseConfig) -> Result<AttributionMap> {
    let (h, w) = image.dims();
    config.validate(h, w)?;
    let p = image.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // Masks are drawn sequentially so the result does not depend on batching.
    let mut chunks = Vec::new();
    let mut left = config.masks;
    while left > 0 {
        let n = left.min(config.batch);
        chunks.push(rise_masks(h, w, config, &mut rng, n));
        left -= n;
    }
    let scores: Vec<Vec<f32>> = chunks
        .par_iter()
        .map(|masks| {
            let mut data = Vec::with_capacity(masks.len() * p);
            for m in masks {
                data.extend(m.iter().zip(image.pixels()).map(|(a, b)| a * b));
            }
            let batch = Tensor::new(vec![masks.len(), 1, h, w], data)?;
            predict_scores(model, &batch, class, config.score)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0f64; p];
    for (masks, sc) in chunks.iter().zip(&scores) {
        for (m, &s) in masks.iter().zip(sc) {
            for (t, &mv) in total.iter_mut().zip(m) {
                *t += s as f64 * mv as f64;
            }
        }
    }
    let norm = config.masks as f64 * config.keep_probability;
    let values = total.iter().map(|&v| (v / norm) as f32).collect();
    AttributionMap::new(h, w, values, Method::Rise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Head, LinearModel};

    #[test]
    fn unoccluded_masks_give_constant_score() {
        let m = LinearModel::constant(4, 4, &[0.35, 0.65]).unwrap();
        let cfg = RiseConfig {
            masks: 20,
            grid: 1,
            keep_probability: 1.0,
            ..RiseConfig::default()
        };
        let img = Image::new(4, 4, vec![0.5; 16]).unwrap();
        let map = rise(&m, &img, 1, &cfg).unwrap();
        assert!(map.values().iter().all(|&v| (v - 0.65).abs() < 1e-6), "{:?}", map.values());
    }

    #[test]
    fn constant_model_converges_to_its_score() {
        let m = LinearModel::constant(8, 8, &[0.3, 0.7]).unwrap();
        let cfg = RiseConfig {
            masks: 2000,
            grid: 4,
            ..RiseConfig::default()
        };
        let img = Image::new(8, 8, vec![0.5; 64]).unwrap();
        let map = rise(&m, &img, 1, &cfg).unwrap();
        for &v in map.values() {
            assert!(((v - 0.7) / 0.7).abs() < 0.05, "{v}");
        }
    }

    #[test]
    fn pixel_sum_model_ranks_by_value() {
        let m = LinearModel::new(2, 2, vec![vec![1.0; 4]], vec![0.0], Head::Identity).unwrap();
        let img = Image::new(2, 2, vec![0.9, 0.1, 0.5, 0.3]).unwrap();
        let cfg = RiseConfig {
            masks: 5000,
            grid: 2,
            seed: 11,
            ..RiseConfig::default()
        };
        let map = rise(&m, &img, 0, &cfg).unwrap();
        let v = map.values();
        assert!(v[0] > v[2] && v[2] > v[3] && v[3] > v[1], "{v:?}");
    }

    #[test]
    fn deterministic_and_batch_independent() {
        let m = LinearModel::new(4, 4, vec![(0..16).map(|i| i as f32 / 16.0).collect()], vec![0.0], Head::Identity).unwrap();
        let img = Image::new(4, 4, (0..16).map(|i| (i % 5) as f32 / 5.0).collect()).unwrap();
        let a = rise(&m, &img, 0, &RiseConfig { masks: 50, grid: 2, batch: 7, ..RiseConfig::default() }).unwrap();
        let b = rise(&m, &img, 0, &RiseConfig { masks: 50, grid: 2, batch: 50, ..RiseConfig::default() }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grid_larger_than_image_is_rejected() {
        let m = LinearModel::constant(4, 4, &[0.5, 0.5]).unwrap();
        let cfg = RiseConfig { grid: 5, ..RiseConfig::default() };
        assert!(rise(&m, &Image::zeros(4, 4), 0, &cfg).is_err());
    }
}
