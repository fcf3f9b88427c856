//! The classifier interface shared by the trained network and the analytic
//! reference models, plus recorded forward/backward passes over it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Which output an attribution or loss is taken over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// Pre-softmax class logit.
    #[default]
    Logit,
    /// Post-softmax class probability.
    Probability,
}

/// Nodes produced by recording a model on a tape.
#[derive(Clone, Debug)]
pub struct Outputs {
    pub logits: Var,
    pub probabilities: Var,
    /// Post-activation output of the last convolution block, if any.
    pub feature_map: Option<Var>,
    /// Every layer output in execution order.
    pub layers: Vec<(String, Var)>,
    /// Parameter leaves in declaration order.
    pub params: Vec<Var>,
}

impl Outputs {
    pub fn score(&self, kind: ScoreKind) -> Var {
        match kind {
            ScoreKind::Logit => self.logits,
            ScoreKind::Probability => self.probabilities,
        }
    }
}

/// A single-channel image classifier that can be recorded on a [`Tape`].
///
/// Implementations must not mutate themselves while recording; a shared
/// reference may be recorded on many tapes concurrently.
pub trait Model: Sync {
    /// `(height, width)` of one input image.
    fn input_dims(&self) -> (usize, usize);

    fn num_classes(&self) -> usize;

    /// Whether the weights are locked against training updates.
    fn is_frozen(&self) -> bool {
        true
    }

    /// Record the forward pass for `input` of shape `[n, 1, h, w]`.
    fn record(&self, tape: &mut Tape, input: Var) -> Result<Outputs>;

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let (h, w) = self.input_dims();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != h || shape[3] != w {
            return Err(Error::dim(format!("model expects [n, 1, {h}, {w}], got {shape:?}")));
        }
        Ok(())
    }
}

/// A finished forward pass with every layer output retained.
pub struct ActivationRecord {
    tape: Tape,
    input: Var,
    outputs: Outputs,
}

impl ActivationRecord {
    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn input(&self) -> Var {
        self.input
    }

    pub fn outputs(&self) -> &Outputs {
        &self.outputs
    }

    pub fn logits(&self) -> &Tensor {
        self.tape.value(self.outputs.logits)
    }

    pub fn probabilities(&self) -> &Tensor {
        self.tape.value(self.outputs.probabilities)
    }

    pub fn layer(&self, name: &str) -> Option<&Tensor> {
        self.outputs
            .layers
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| self.tape.value(*v))
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.outputs.layers.iter().map(|(n, _)| n.as_str())
    }
}

/// Gradients of one selected class score.
pub struct GradientSet {
    grads: Gradients,
    input: Var,
    feature_map: Option<Var>,
}

impl GradientSet {
    pub fn input(&self) -> Tensor {
        self.grads.get(self.input)
    }

    pub fn feature_map(&self) -> Option<Tensor> {
        self.feature_map.map(|v| self.grads.get(v))
    }

    pub fn get(&self, v: Var) -> Tensor {
        self.grads.get(v)
    }
}

/// Run `model` on `input` (`[n, 1, h, w]`). Returns class probabilities and,
/// when `record` is set, the retained activations for a later [`backward`].
pub fn forward<M: Model + ?Sized>(model: &M, input: &Tensor, record: bool) -> Result<(Tensor, Option<ActivationRecord>)> {
    model.check_input(input.shape())?;
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone(), record);
    let outputs = model.record(&mut tape, x)?;
    let probs = tape.value(outputs.probabilities).clone();
    let rec = record.then_some(ActivationRecord {
        tape,
        input: x,
        outputs,
    });
    Ok((probs, rec))
}

/// Gradient of the selected class score (summed over the batch) with respect to
/// every recorded tensor.
pub fn backward(record: &ActivationRecord, class: usize, score: ScoreKind) -> Result<GradientSet> {
    let root = record.outputs.score(score);
    let grads = record.tape.backward_select(root, class)?;
    Ok(GradientSet {
        grads,
        input: record.input,
        feature_map: record.outputs.feature_map,
    })
}

/// Class probabilities for a batch.
pub fn predict<M: Model + ?Sized>(model: &M, input: &Tensor) -> Result<Tensor> {
    forward(model, input, false).map(|(p, _)| p)
}

/// Score of `class` for every batch row, without recording.
pub fn predict_scores<M: Model + ?Sized>(model: &M, input: &Tensor, class: usize, score: ScoreKind) -> Result<Vec<f32>> {
    model.check_input(input.shape())?;
    if class >= model.num_classes() {
        return Err(Error::dim(format!("class {class} outside {} classes", model.num_classes())));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone(), false);
    let outputs = model.record(&mut tape, x)?;
    let out = tape.value(outputs.score(score));
    Ok((0..out.batch()).map(|r| out.row(r)[class]).collect())
}

/// Scores for `class` and their input gradients, one row per batch item.
pub fn score_and_input_gradient<M: Model + ?Sized>(
    model: &M,
    input: &Tensor,
    class: usize,
    score: ScoreKind,
) -> Result<(Vec<f32>, Tensor)> {
    if class >= model.num_classes() {
        return Err(Error::dim(format!("class {class} outside {} classes", model.num_classes())));
    }
    let (_, rec) = forward(model, input, true)?;
    let rec = rec.expect("recorded");
    let out = rec.tape.value(rec.outputs.score(score));
    let scores = (0..out.batch()).map(|r| out.row(r)[class]).collect();
    let g = backward(&rec, class, score)?;
    Ok((scores, g.input()))
}

/// Stack `[h, w]` images into a `[n, 1, h, w]` batch.
pub fn batch_of(images: &[&[f32]], h: usize, w: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.len() != h * w {
            return Err(Error::dim(format!("image of {} pixels, expected {h}x{w}", img.len())));
        }
        data.extend_from_slice(img);
    }
    Tensor::new(vec![images.len(), 1, h, w], data)
}

/// Output head of a [`LinearModel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Softmax,
    /// The linear outputs are reported directly as "probabilities".
    Identity,
}

/// Affine classifier `z = W x + b` over the flattened image. Its gradients are
/// known in closed form, which makes it the reference model for checking
/// attribution and evaluation code.
#[derive(Clone, Debug)]
pub struct LinearModel {
    h: usize,
    w: usize,
    weight: Tensor,
    bias: Tensor,
    head: Head,
}

impl LinearModel {
    /// `weights` holds one row of `h * w` coefficients per class.
    pub fn new(h: usize, w: usize, weights: Vec<Vec<f32>>, bias: Vec<f32>, head: Head) -> Result<Self> {
        let classes = weights.len();
        if classes == 0 || bias.len() != classes || weights.iter().any(|r| r.len() != h * w) {
            return Err(Error::dim("linear model weights must be classes x (h*w) with one bias per class"));
        }
        Ok(Self {
            h,
            w,
            weight: Tensor::new(vec![classes, h * w], weights.concat())?,
            bias: Tensor::new(vec![classes], bias)?,
            head,
        })
    }

    /// A model whose output ignores the input: softmax probabilities `probs`.
    pub fn constant(h: usize, w: usize, probs: &[f32]) -> Result<Self> {
        let zeros = vec![vec![0.0; h * w]; probs.len()];
        Self::new(h, w, zeros, probs.iter().map(|p| p.ln()).collect(), Head::Softmax)
    }

    /// Two classes with "probability" of class 1 equal to the mean pixel value
    /// and class 0 its complement.
    pub fn mean_pixel(h: usize, w: usize) -> Result<Self> {
        let p = (h * w) as f32;
        Self::new(
            h,
            w,
            vec![vec![-1.0 / p; h * w], vec![1.0 / p; h * w]],
            vec![1.0, 0.0],
            Head::Identity,
        )
    }
}

impl Model for LinearModel {
    fn input_dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    fn num_classes(&self) -> usize {
        self.bias.numel()
    }

    fn record(&self, tape: &mut Tape, input: Var) -> Result<Outputs> {
        tape.set_layer("linear");
        let w = tape.leaf(self.weight.clone(), false);
        let b = tape.leaf(self.bias.clone(), false);
        let logits = tape.dense(input, w, b)?;
        let probabilities = match self.head {
            Head::Softmax => {
                tape.set_layer("softmax");
                tape.softmax(logits)?
            }
            Head::Identity => logits,
        };
        Ok(Outputs {
            logits,
            probabilities,
            feature_map: None,
            layers: vec![("linear".into(), logits), ("head".into(), probabilities)],
            params: vec![w, b],
        })
    }
}
