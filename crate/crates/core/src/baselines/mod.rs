//! Comparison attribution methods over the same frozen classifier.

mod cam;
mod gradient;
mod rise;

pub use cam::{cam_from_feature_maps, grad_cam, grad_cam_pp, CamVariant};
pub use gradient::{integrated_gradients, saliency, IgConfig};
pub use rise::{rise, rise_masks, RiseConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::image::{AttributionMap, Image, Method};

/// Seeded uniform noise in `[0, 1)`; the control every method should beat.
pub fn random_attribution(image: &Image, seed: u64) -> Result<AttributionMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..image.len()).map(|_| rng.gen::<f32>()).collect();
    AttributionMap::new(image.height(), image.width(), values, Method::Random)
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize_bilinear(src: &[f32], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f32> {
    let coord = |d: usize, s: usize, n: usize| -> (usize, usize, f32) {
        let x = ((d as f32 + 0.5) * s as f32 / n as f32 - 0.5).clamp(0.0, (s - 1) as f32);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(s - 1);
        (lo, hi, x - lo as f32)
    };
    let cols: Vec<_> = (0..dw).map(|x| coord(x, sw, dw)).collect();
    let mut out = Vec::with_capacity(dh * dw);
    for y in 0..dh {
        let (y0, y1, fy) = coord(y, sh, dh);
        for &(x0, x1, fx) in &cols {
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bot = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}
