use serde::{Deserialize, Serialize};

use super::layers::Tensor;
use super::loss::{bce_grad, bce_loss, sigmoid};
use super::model::{images_to_tensor, Mode, Model};
use super::optim::{Optimizer, OptimizerState};
use crate::augment::{eval_preprocess, train_pipeline, PipelineSpec};
use crate::error::{Error, Result};
use crate::synthgen::Sample;
use crate::tensor::{Image, Rng};

const SHUFFLE_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;

/// Images scored per forward pass at evaluation time.
pub const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    pub seed: u64,
    #[serde(default)]
    pub pipeline: PipelineSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            seed: 0,
            pipeline: PipelineSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        self.optimizer.validate()?;
        self.pipeline.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    /// Mean training loss of each epoch.
    pub epoch_loss: Vec<f64>,
}

/// Minibatch training on `samples`. Batch order is a seeded shuffle per
/// epoch; every image goes through the training pipeline with a stream
/// derived from `(seed, epoch, sample index)`.
pub fn train(model: &mut Model<f32>, samples: &[&Sample], config: &TrainConfig) -> Result<TrainHistory> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("training split".into()));
    }
    let root = Rng::new(config.seed);
    let mut optimizer = OptimizerState::new(config.optimizer);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        root.child(SHUFFLE_STREAM).child(epoch as u64).shuffle(&mut order);
        let augment = root.child(AUGMENT_STREAM).child(epoch as u64);
        let mut total = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let images = batch
                .iter()
                .map(|&i| train_pipeline(&samples[i].image, &config.pipeline, &mut augment.child(i as u64)))
                .collect::<Result<Vec<Image>>>()?;
            let labels: Vec<u8> = batch.iter().map(|&i| samples[i].label).collect();
            let loss = step(model, &mut optimizer, &images, &labels, config.learning_rate)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "loss {loss} at epoch {epoch}, batch {b}"
                )));
            }
            total += loss * batch.len() as f64;
        }
        history.epoch_loss.push(total / samples.len() as f64);
    }
    Ok(history)
}

/// One forward/backward/update on a batch; returns the batch loss.
pub fn step(
    model: &mut Model<f32>,
    optimizer: &mut OptimizerState<f32>,
    images: &[Image],
    labels: &[u8],
    learning_rate: f64,
) -> Result<f64> {
    let refs: Vec<&Image> = images.iter().collect();
    let x = images_to_tensor::<f32>(&refs)?;
    let (out, tape) = model.forward(&x, Mode::Train)?;
    let loss = bce_loss(&out.data, labels)?;
    if !loss.is_finite() {
        return Ok(loss);
    }
    let grad = Tensor::new(out.n, 1, 1, 1, bce_grad(&out.data, labels)?)?;
    let grads = model.backward(&tape, &grad)?;
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return Ok(f64::NAN);
    }
    optimizer.step(model.params_mut(), &grads, learning_rate)?;
    model.update_running_stats(&tape);
    Ok(loss)
}

/// Eval-mode probabilities after [`eval_preprocess`] (center crop when
/// `crop_size` is set), in the order of `samples`, with their labels.
pub fn predict_scores(
    model: &Model<f32>,
    samples: &[&Sample],
    crop_size: Option<usize>,
) -> Result<(Vec<f64>, Vec<u8>)> {
    let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    let scores = score_images(model, &images, crop_size)?;
    Ok((scores, samples.iter().map(|s| s.label).collect()))
}

pub fn score_images(model: &Model<f32>, images: &[&Image], crop_size: Option<usize>) -> Result<Vec<f64>> {
    let mut scores = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_BATCH) {
        let prepared = match crop_size {
            Some(size) => chunk
                .iter()
                .map(|img| eval_preprocess(img, size))
                .collect::<Result<Vec<Image>>>()?,
            None => chunk.iter().map(|&img| img.clone()).collect(),
        };
        let refs: Vec<&Image> = prepared.iter().collect();
        let logits = model.logits(&images_to_tensor::<f32>(&refs)?, Mode::Eval)?;
        scores.extend(logits.iter().map(|&z| sigmoid(z as f64)));
    }
    Ok(scores)
}
