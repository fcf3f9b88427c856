//! Pixel-wise channel isolation mixing.
//!
//! Every pixel of an image becomes its own channel `A_i`. A non-negative
//! weight `alpha_i` per channel blends them back into an image
//! `C = sum_i alpha_i * A_i`, which is fed to a frozen classifier. The weights
//! are fitted by projected SGD to minimise the loss of the image's own label;
//! reshaped to `h x w`, they are the attribution map.
//!
//! Since channel `i` is zero everywhere except at pixel `i`, the blend is
//! computed as an elementwise product rather than a sum of `p` sparse images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{AttributionMap, Image, Method};
use crate::model::{Model, ScoreKind};
use crate::optim::{SgdConfig, SgdState};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelChannel {
    pub value: f32,
    pub row: usize,
    pub col: usize,
}

/// Row-major decomposition of an image into one channel per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelChannels {
    pub image_id: String,
    height: usize,
    width: usize,
    channels: Vec<PixelChannel>,
}

impl PixelChannels {
    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn channels(&self) -> &[PixelChannel] {
        &self.channels
    }

    pub fn values(&self) -> impl Iterator<Item = f32> + '_ {
        self.channels.iter().map(|c| c.value)
    }

    /// Inverse of [`isolate_pixels`].
    pub fn reassemble(&self) -> Image {
        let mut img = Image::zeros(self.height, self.width);
        for c in &self.channels {
            img.pixels_mut()[c.row * self.width + c.col] = c.value;
        }
        img
    }
}

pub fn isolate_pixels(image_id: &str, image: &Image) -> Result<PixelChannels> {
    if !image.is_finite() {
        return Err(Error::numeric(format!("image '{image_id}'"), "non-finite pixel"));
    }
    let (h, w) = image.dims();
    let channels = image
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &value)| PixelChannel {
            value,
            row: i / w,
            col: i % w,
        })
        .collect();
    Ok(PixelChannels {
        image_id: image_id.to_string(),
        height: h,
        width: w,
        channels,
    })
}

/// `C_i = alpha_i * A_i`, reshaped to the source dimensions. No clipping.
pub fn blend(alpha: &[f32], channels: &PixelChannels) -> Result<Image> {
    if alpha.len() != channels.len() {
        return Err(Error::dim(format!(
            "{} mixing weights for {} pixel channels",
            alpha.len(),
            channels.len()
        )));
    }
    if let Some((i, a)) = alpha.iter().enumerate().find(|(_, a)| !(**a >= 0.0)) {
        return Err(Error::Constraint(format!("alpha[{i}] = {a} is negative")));
    }
    let (h, w) = channels.dims();
    let mut out = Image::zeros(h, w);
    for ((o, c), a) in out.pixels_mut().iter_mut().zip(&channels.channels).zip(alpha) {
        *o = a * c.value;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AlphaInit {
    /// Start from the black image.
    #[default]
    Zeros,
    /// Start from the unmodified image.
    Ones,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub steps: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    /// `Probability`: cross-entropy of the softmax output against the label.
    /// `Logit`: the negated label logit.
    pub loss: ScoreKind,
    pub init: AlphaInit,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            learning_rate: 0.5,
            momentum: 0.9,
            loss: ScoreKind::Probability,
            init: AlphaInit::Zeros,
        }
    }
}

/// Mixing weights of one image together with their optimizer state.
#[derive(Clone, Debug)]
pub struct MixingState {
    pub image_id: String,
    pub label: usize,
    alpha: Vec<f32>,
    sgd: SgdState,
    step: usize,
    /// Loss before each step.
    pub loss_trace: Vec<f32>,
}

impl MixingState {
    pub fn alpha(&self) -> &[f32] {
        &self.alpha
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn optimizer(&self) -> &SgdState {
        &self.sgd
    }
}

/// Fit the mixing weights of `image` against a frozen `model` for `label`.
pub fn fit_mixing<M: Model + ?Sized>(
    model: &M,
    image_id: &str,
    image: &Image,
    label: usize,
    config: &FitConfig,
) -> Result<MixingState> {
    let mut state = init_mixing(model, image_id, image, label, config)?;
    for _ in 0..config.steps {
        mixing_step(model, image, &mut state, config.loss)?;
    }
    Ok(state)
}

pub fn init_mixing<M: Model + ?Sized>(
    model: &M,
    image_id: &str,
    image: &Image,
    label: usize,
    config: &FitConfig,
) -> Result<MixingState> {
    if !model.is_frozen() {
        return Err(Error::State("mixing weights must be fitted against a frozen network".into()));
    }
    if label >= model.num_classes() {
        return Err(Error::dim(format!("label {label} outside {} classes", model.num_classes())));
    }
    if config.steps == 0 {
        return Err(Error::config("fit needs at least one step"));
    }
    if image.dims() != model.input_dims() {
        return Err(Error::dim(format!(
            "image {:?} does not match network input {:?}",
            image.dims(),
            model.input_dims()
        )));
    }
    let p = image.len();
    let sgd = SgdState::new(SgdConfig {
        learning_rate: config.learning_rate,
        momentum: config.momentum,
        decay_factor: 1.0,
        decay_interval: 1,
    })?;
    let alpha = match config.init {
        AlphaInit::Zeros => vec![0.0; p],
        AlphaInit::Ones => vec![1.0; p],
    };
    Ok(MixingState {
        image_id: image_id.to_string(),
        label,
        alpha,
        sgd,
        step: 0,
        loss_trace: Vec::with_capacity(config.steps),
    })
}

/// Loss at the current weights and its gradient with respect to them.
pub fn loss_and_alpha_gradient<M: Model + ?Sized>(
    model: &M,
    image: &Image,
    alpha: &[f32],
    label: usize,
    loss: ScoreKind,
) -> Result<(f32, Tensor)> {
    let (h, w) = image.dims();
    let mut tape = Tape::new();
    tape.set_layer("mixing");
    let a = tape.leaf(Tensor::new(vec![alpha.len()], alpha.to_vec())?, true);
    let img = tape.leaf(Tensor::new(vec![1, 1, h, w], image.pixels().to_vec())?, false);
    let a_img = tape.reshape(a, &[1, 1, h, w])?;
    let blended = tape.mul(a_img, img)?;
    let out = model.record(&mut tape, blended)?;
    let (value, grads) = match loss {
        ScoreKind::Probability => {
            tape.set_layer("loss");
            let l = tape.softmax_cross_entropy(out.logits, &[label])?;
            (tape.value(l).data()[0], tape.backward(l)?)
        }
        ScoreKind::Logit => {
            let z = tape.value(out.logits);
            let mut seed = Tensor::zeros(z.shape());
            seed.data_mut()[label] = -1.0;
            (-z.data()[label], tape.backward_from(out.logits, seed)?)
        }
    };
    Ok((value, grads.get(a)))
}

/// One projected SGD step: `alpha <- max(0, alpha + v)`.
pub fn mixing_step<M: Model + ?Sized>(model: &M, image: &Image, state: &mut MixingState, loss: ScoreKind) -> Result<()> {
    let step = state.step;
    let (value, grad) = loss_and_alpha_gradient(model, image, &state.alpha, state.label, loss).map_err(|e| match e {
        Error::Numeric { context, detail } => Error::numeric(format!("mixing step {step}, {context}"), detail),
        other => other,
    })?;
    if !value.is_finite() {
        return Err(Error::numeric(format!("mixing step {step}"), "non-finite loss"));
    }
    state.loss_trace.push(value);
    let mut alpha = Tensor::new(vec![state.alpha.len()], std::mem::take(&mut state.alpha))?;
    state.sgd.step(&mut [&mut alpha], &[grad])?;
    state.alpha = alpha.into_data();
    for a in &mut state.alpha {
        *a = a.max(0.0);
    }
    state.step += 1;
    Ok(())
}

/// Row-major reshape of the mixing weights into a raw attribution map.
pub fn extract_map(state: &MixingState, h: usize, w: usize) -> Result<AttributionMap> {
    if state.alpha.len() != h * w {
        return Err(Error::dim(format!(
            "{} mixing weights cannot form a {h}x{w} map",
            state.alpha.len()
        )));
    }
    AttributionMap::new(h, w, state.alpha.clone(), Method::Pcim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Head, LinearModel};

    fn img(h: usize, w: usize, px: &[f32]) -> Image {
        Image::new(h, w, px.to_vec()).unwrap()
    }

    /// Class 1 logit is the mean of the blended image; class 0 logit is 0.
    fn mean_logit_model(h: usize, w: usize) -> LinearModel {
        let p = (h * w) as f32;
        LinearModel::new(h, w, vec![vec![0.0; h * w], vec![1.0 / p; h * w]], vec![0.0, 0.0], Head::Softmax).unwrap()
    }

    #[test]
    fn isolation_is_row_major() {
        let i = img(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let ch = isolate_pixels("a", &i).unwrap();
        let coords: Vec<_> = ch.channels().iter().map(|c| (c.row, c.col)).collect();
        assert_eq!(coords, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(ch.values().collect::<Vec<_>>(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ch.reassemble(), i);
        let one = isolate_pixels("b", &img(1, 1, &[0.3])).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn blend_examples() {
        let i = img(2, 2, &[0.2, 0.4, 0.6, 0.8]);
        let ch = isolate_pixels("x", &i).unwrap();
        assert_eq!(blend(&[1.0; 4], &ch).unwrap(), i);
        assert_eq!(blend(&[0.0; 4], &ch).unwrap().pixels(), &[0.0; 4]);
        let c = blend(&[0.5, 1.0, 0.0, 2.0], &ch).unwrap();
        assert_eq!(c.pixels(), &[0.1, 0.4, 0.0, 1.6]);
    }

    #[test]
    fn blend_rejects_bad_alpha() {
        let ch = isolate_pixels("x", &img(1, 2, &[0.1, 0.2])).unwrap();
        assert!(matches!(blend(&[0.1, -0.1], &ch), Err(Error::Constraint(_))));
        assert!(matches!(blend(&[0.1], &ch), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_image_keeps_alpha_at_zero() {
        let m = mean_logit_model(3, 3);
        let s = fit_mixing(&m, "z", &Image::zeros(3, 3), 1, &FitConfig::default()).unwrap();
        assert!(s.alpha().iter().all(|&a| a == 0.0));
        assert_eq!(s.steps_taken(), 200);
    }

    #[test]
    fn single_step_is_projected_gradient_step() {
        let m = mean_logit_model(2, 2);
        let i = img(2, 2, &[0.1, 0.5, 0.9, 0.3]);
        let cfg = FitConfig {
            steps: 1,
            learning_rate: 0.7,
            momentum: 0.0,
            ..FitConfig::default()
        };
        let (_, g) = loss_and_alpha_gradient(&m, &i, &[0.0; 4], 0, ScoreKind::Probability).unwrap();
        let s = fit_mixing(&m, "i", &i, 0, &cfg).unwrap();
        for (a, gi) in s.alpha().iter().zip(g.data()) {
            assert_eq!(*a, (-0.7 * gi).max(0.0));
        }
        // Label 0 pushes weight away from every pixel: all stay at zero.
        assert!(s.alpha().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn mean_logit_model_orders_alpha_by_intensity() {
        let m = mean_logit_model(2, 3);
        let px = [0.2, 0.9, 0.5, 0.05, 0.7, 0.35];
        let s = fit_mixing(&m, "i", &img(2, 3, &px), 1, &FitConfig::default()).unwrap();
        let map = extract_map(&s, 2, 3).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                if px[i] > px[j] {
                    assert!(map.values()[i] > map.values()[j], "{i} vs {j}: {:?}", map.values());
                }
            }
        }
    }

    #[test]
    fn extract_map_reshapes() {
        let m = mean_logit_model(2, 2);
        let mut s = init_mixing(&m, "x", &Image::zeros(2, 2), 1, &FitConfig::default()).unwrap();
        s.alpha = vec![0.0, 1.0, 2.0, 3.0];
        let map = extract_map(&s, 2, 2).unwrap();
        assert_eq!(map.get(1, 0), 2.0);
        assert_eq!(map.method(), Method::Pcim);
        assert!(extract_map(&s, 3, 2).is_err());
        s.alpha = vec![0.6; 4];
        assert_eq!(extract_map(&s, 2, 2).unwrap().normalized().values(), &[0.0; 4]);
    }

    #[test]
    fn unfrozen_network_is_rejected() {
        let net = crate::network::build_minivgg(16, 16, 2, 0).unwrap();
        let r = fit_mixing(&net, "x", &Image::zeros(16, 16), 0, &FitConfig::default());
        assert!(matches!(r, Err(Error::State(_))));
    }

    #[test]
    fn zero_steps_rejected() {
        let m = mean_logit_model(2, 2);
        let cfg = FitConfig { steps: 0, ..FitConfig::default() };
        assert!(fit_mixing(&m, "x", &Image::zeros(2, 2), 0, &cfg).is_err());
    }
}
