//! Training the classifier and measuring it on labeled sets.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{fingerprint, DatasetSplits, LabeledImage};
use crate::error::{Error, Result};
use crate::model::{batch_of, predict, Model};
use crate::network::Network;
use crate::optim::{SgdConfig, SgdState};
use crate::tape::Tape;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 32,
            // 0.05 diverges on MiniVGG within the first epochs.
            sgd: SgdConfig {
                learning_rate: 0.01,
                ..SgdConfig::default()
            },
            seed: 0,
        }
    }
}

/// Training provenance stored with a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    pub config: TrainConfig,
    pub dataset_fingerprint: String,
    /// Mean training cross-entropy per epoch.
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    /// Zero-based epoch whose weights were kept.
    pub epoch: usize,
    pub validation_loss: f64,
    pub manifest: TrainManifest,
}

fn check_labels(set: &[LabeledImage], classes: usize, name: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::data(format!("{name} split is empty")));
    }
    if let Some(s) = set.iter().find(|s| s.label >= classes) {
        return Err(Error::data(format!("{name} image {} has label {} outside {classes} classes", s.id, s.label)));
    }
    Ok(())
}

fn batch(model: &dyn Model, items: &[&LabeledImage]) -> Result<crate::Tensor> {
    let (h, w) = model.input_dims();
    let pixels: Vec<&[f32]> = items.iter().map(|s| s.image.pixels()).collect();
    batch_of(&pixels, h, w)
}

/// Mean cross-entropy of `model` on `set`.
pub fn mean_cross_entropy<M: Model + ?Sized>(model: &M, set: &[LabeledImage]) -> Result<f64> {
    let (h, w) = model.input_dims();
    let mut total = 0.0f64;
    for chunk in set.chunks(128) {
        let pixels: Vec<&[f32]> = chunk.iter().map(|s| s.image.pixels()).collect();
        let probs = predict(model, &batch_of(&pixels, h, w)?)?;
        for (r, s) in chunk.iter().enumerate() {
            total -= (probs.row(r)[s.label] as f64).max(f64::MIN_POSITIVE).ln();
        }
    }
    Ok(total / set.len() as f64)
}

/// Minibatch momentum SGD on `splits.train`. Returns the weights of the epoch
/// with the lowest validation cross-entropy; ties keep the earlier epoch.
pub fn train(mut network: Network, splits: &DatasetSplits, config: &TrainConfig) -> Result<Checkpoint> {
    if network.is_frozen() {
        return Err(Error::State("cannot train a frozen network".into()));
    }
    if config.epochs == 0 {
        return Err(Error::config("epochs must be at least 1"));
    }
    let classes = network.num_classes();
    check_labels(&splits.train, classes, "train")?;
    check_labels(&splits.validation, classes, "validation")?;
    if config.batch_size == 0 || config.batch_size > splits.train.len() {
        return Err(Error::config(format!(
            "batch size {} must lie in 1..={}",
            config.batch_size,
            splits.train.len()
        )));
    }
    let mut sgd = SgdState::new(config.sgd)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..splits.train.len()).collect();
    let mut manifest = TrainManifest {
        config: *config,
        dataset_fingerprint: fingerprint(
            &[&splits.train[..], &splits.validation[..], &splits.holdout[..]].concat(),
        ),
        train_loss: Vec::with_capacity(config.epochs),
        validation_loss: Vec::with_capacity(config.epochs),
    };
    let mut best: Option<(usize, f64, Network)> = None;

    for epoch in 0..config.epochs {
        sgd.set_epoch(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for idx in order.chunks(config.batch_size) {
            let items: Vec<&LabeledImage> = idx.iter().map(|&i| &splits.train[i]).collect();
            let labels: Vec<usize> = items.iter().map(|s| s.label).collect();
            let mut tape = Tape::new();
            let x = tape.leaf(batch(&network, &items)?, false);
            let out = network.record(&mut tape, x)?;
            let loss = tape.softmax_cross_entropy(out.logits, &labels)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::numeric(format!("training epoch {epoch}"), format!("loss is {value}")));
            }
            log::trace!("epoch {epoch} batch loss {value:.5}");
            epoch_loss += value as f64 * items.len() as f64;
            let mut grads = tape.backward(loss)?;
            let grads: Vec<_> = out.params.iter().map(|&p| grads.take(p)).collect();
            sgd.step(&mut network.parameters_mut()?, &grads)?;
        }
        let train_loss = epoch_loss / splits.train.len() as f64;
        let val_loss = mean_cross_entropy(&network, &splits.validation)?;
        if !val_loss.is_finite() {
            return Err(Error::numeric(format!("validation after epoch {epoch}"), format!("loss is {val_loss}")));
        }
        log::info!("epoch {epoch}: train loss {train_loss:.5}, validation loss {val_loss:.5}");
        manifest.train_loss.push(train_loss);
        manifest.validation_loss.push(val_loss);
        if best.as_ref().map_or(true, |(_, b, _)| val_loss < *b) {
            best = Some((epoch, val_loss, network.clone()));
        }
    }
    let (epoch, validation_loss, network) = best.expect("at least one epoch");
    Ok(Checkpoint {
        network,
        epoch,
        validation_loss,
        manifest,
    })
}

/// Holdout metrics. Precision of a class that is never predicted counts as 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn predict_labels<M: Model + ?Sized>(model: &M, set: &[LabeledImage]) -> Result<Vec<usize>> {
    let (h, w) = model.input_dims();
    let mut out = Vec::with_capacity(set.len());
    for chunk in set.chunks(128) {
        let pixels: Vec<&[f32]> = chunk.iter().map(|s| s.image.pixels()).collect();
        let probs = predict(model, &batch_of(&pixels, h, w)?)?;
        for r in 0..probs.batch() {
            let row = probs.row(r);
            // First maximum wins.
            let arg = (0..row.len()).fold(0, |a, i| if row[i] > row[a] { i } else { a });
            out.push(arg);
        }
    }
    Ok(out)
}

pub fn metrics_from_predictions(labels: &[usize], predicted: &[usize], classes: usize) -> Result<ClassifierMetrics> {
    if labels.is_empty() || labels.len() != predicted.len() {
        return Err(Error::data("metrics need equally many labels and predictions, at least one"));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&y, &p) in labels.iter().zip(predicted) {
        if y >= classes || p >= classes {
            return Err(Error::data(format!("label {y} or prediction {p} outside {classes} classes")));
        }
        confusion[y][p] += 1;
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let (mut prec, mut rec, mut f1) = (0.0, 0.0, 0.0);
    for c in 0..classes {
        let tp = confusion[c][c] as f64;
        let predicted_c: usize = (0..classes).map(|t| confusion[t][c]).sum();
        let actual_c: usize = confusion[c].iter().sum();
        let p = if predicted_c > 0 { tp / predicted_c as f64 } else { 0.0 };
        let r = if actual_c > 0 { tp / actual_c as f64 } else { 0.0 };
        prec += p;
        rec += r;
        f1 += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let k = classes as f64;
    Ok(ClassifierMetrics {
        accuracy: correct as f64 / labels.len() as f64,
        macro_precision: prec / k,
        macro_recall: rec / k,
        macro_f1: f1 / k,
        confusion,
    })
}

pub fn evaluate_classifier<M: Model + ?Sized>(model: &M, set: &[LabeledImage]) -> Result<ClassifierMetrics> {
    if set.is_empty() {
        return Err(Error::data("cannot evaluate on an empty set"));
    }
    let predicted = predict_labels(model, set)?;
    let labels: Vec<usize> = set.iter().map(|s| s.label).collect();
    metrics_from_predictions(&labels, &predicted, model.num_classes())
}
