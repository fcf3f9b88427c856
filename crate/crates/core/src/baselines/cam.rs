use crate::error::{Error, Result};
use crate::image::{AttributionMap, Image, Method};
use crate::model::{backward, batch_of, forward, Model, ScoreKind};

use super::resize_bilinear;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CamVariant {
    GradCam,
    GradCamPlusPlus,
}

/// Low-resolution class activation map `ReLU(sum_k w_k A^k)` from the last
/// conv layer's activations `acts` and score gradients `grads`, both laid out
/// `[k, fh, fw]`.
///
/// Grad-CAM weights each channel by its mean gradient. Grad-CAM++ uses
/// `w_k = sum_ij a_ij ReLU(g_ij)` with
/// `a_ij = g_ij^2 / (2 g_ij^2 + sum_ab A_ab g_ij^3)`, the closed form obtained
/// by differentiating `exp(score)`; zero denominators give `a_ij = 0`.
pub fn cam_from_feature_maps(acts: &[f32], grads: &[f32], channels: usize, fh: usize, fw: usize, variant: CamVariant) -> Vec<f32> {
    let plane = fh * fw;
    let mut cam = vec![0.0f32; plane];
    for k in 0..channels {
        let a = &acts[k * plane..(k + 1) * plane];
        let g = &grads[k * plane..(k + 1) * plane];
        let weight = match variant {
            CamVariant::GradCam => g.iter().map(|&v| v as f64).sum::<f64>() / plane as f64,
            CamVariant::GradCamPlusPlus => {
                let sum_a: f64 = a.iter().map(|&v| v as f64).sum();
                g.iter()
                    .map(|&gv| {
                        let gv = gv as f64;
                        let g2 = gv * gv;
                        let denom = 2.0 * g2 + sum_a * g2 * gv;
                        let alpha = if denom != 0.0 { g2 / denom } else { 0.0 };
                        alpha * gv.max(0.0)
                    })
                    .sum::<f64>()
            }
        } as f32;
        for (c, &av) in cam.iter_mut().zip(a) {
            *c += weight * av;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    cam
}

fn class_activation_map<M: Model + ?Sized>(
    model: &M,
    image: &Image,
    class: usize,
    score: ScoreKind,
    variant: CamVariant,
) -> Result<AttributionMap> {
    let (h, w) = image.dims();
    let x = batch_of(&[image.pixels()], h, w)?;
    let (_, rec) = forward(model, &x, true)?;
    let rec = rec.expect("recorded");
    let fm = rec
        .outputs()
        .feature_map
        .ok_or_else(|| Error::Architecture("class activation maps need a convolutional layer".into()))?;
    if class >= model.num_classes() {
        return Err(Error::dim(format!("class {class} outside {} classes", model.num_classes())));
    }
    let grads = backward(&rec, class, score)?.get(fm);
    let acts = rec.tape().value(fm);
    let s = acts.shape();
    let (k, fh, fw) = (s[1], s[2], s[3]);
    let cam = cam_from_feature_maps(acts.data(), grads.data(), k, fh, fw, variant);
    let up = resize_bilinear(&cam, fh, fw, h, w);
    let method = match variant {
        CamVariant::GradCam => Method::GradCam,
        CamVariant::GradCamPlusPlus => Method::GradCamPp,
    };
    AttributionMap::new(h, w, up, method)
}

pub fn grad_cam<M: Model + ?Sized>(model: &M, image: &Image, class: usize, score: ScoreKind) -> Result<AttributionMap> {
    class_activation_map(model, image, class, score, CamVariant::GradCam)
}

pub fn grad_cam_pp<M: Model + ?Sized>(model: &M, image: &Image, class: usize, score: ScoreKind) -> Result<AttributionMap> {
    class_activation_map(model, image, class, score, CamVariant::GradCamPlusPlus)
}
