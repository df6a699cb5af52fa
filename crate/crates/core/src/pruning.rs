//! Structured L1 channel pruning of sequential networks, with parameter
//! and multiply-accumulate accounting and post-pruning fine-tuning.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::augment::masked_count;
use crate::error::{Error, Result};
use crate::nn::{train, BatchNorm, Conv2d, Dense, Layer, Model, Scalar, TrainConfig, TrainHistory};
use crate::synthgen::Sample;
use crate::tensor::Rng;

const FINETUNE_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSpec {
    pub prune_ratio: f64,
    #[serde(default = "default_finetune_epochs")]
    pub finetune_epochs: usize,
    #[serde(default = "default_finetune_fraction")]
    pub finetune_fraction: f64,
}

fn default_finetune_epochs() -> usize {
    5
}

fn default_finetune_fraction() -> f64 {
    0.02
}

impl Default for PruneSpec {
    fn default() -> Self {
        Self::new(0.0)
    }
}

impl PruneSpec {
    pub fn new(prune_ratio: f64) -> Self {
        Self {
            prune_ratio,
            finetune_epochs: default_finetune_epochs(),
            finetune_fraction: default_finetune_fraction(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.prune_ratio) {
            return Err(Error::InvalidArgument(format!(
                "prune_ratio must lie in [0, 1), got {}",
                self.prune_ratio
            )));
        }
        if !(self.finetune_fraction > 0.0 && self.finetune_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "finetune_fraction must lie in (0, 1], got {}",
                self.finetune_fraction
            )));
        }
        Ok(())
    }
}

/// L1 norm of each output channel's weights (bias excluded).
pub fn channel_importance<T: Scalar>(conv: &Conv2d<T>) -> Vec<f64> {
    let per = conv.c_in * conv.kernel * conv.kernel;
    conv.weight
        .chunks_exact(per)
        .map(|w| w.iter().map(|v| v.as_f64().abs()).sum())
        .collect()
}

/// `max(1, ceil((1 - p) * c_out))`.
pub fn retained_count(c_out: usize, prune_ratio: f64) -> usize {
    masked_count(1.0 - prune_ratio, c_out).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerPlan {
    /// Index of the pruned convolution in `model.layers`.
    pub layer: usize,
    /// Index of the conv or dense layer whose input channels follow.
    pub consumer: usize,
    pub c_out: usize,
    pub scores: Vec<f64>,
    /// Kept output channels, ascending.
    pub retained: Vec<usize>,
    /// Smallest retained score.
    pub threshold: f64,
}

impl LayerPlan {
    pub fn removed(&self) -> Vec<usize> {
        (0..self.c_out).filter(|c| self.retained.binary_search(c).is_err()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrunePlan {
    pub prune_ratio: f64,
    pub layers: Vec<LayerPlan>,
}

/// Ranks every convolution's output channels by L1 importance and keeps the
/// top `max(1, ceil((1 - p) C_out))`; equal scores keep the lower index.
pub fn make_plan<T: Scalar>(model: &Model<T>, spec: &PruneSpec) -> Result<PrunePlan> {
    spec.validate()?;
    model.validate()?;
    let edges = model.dependencies();
    let mut layers = Vec::new();
    for (i, layer) in model.layers.iter().enumerate() {
        let Layer::Conv2d(conv) = layer else { continue };
        let consumer = edges
            .iter()
            .find(|(_, producer)| *producer == Some(i))
            .map(|(c, _)| *c)
            .ok_or_else(|| Error::ShapeMismatch(format!("conv layer {i} has no consumer")))?;
        let scores = channel_importance(conv);
        let keep = retained_count(conv.c_out, spec.prune_ratio);
        let mut order: Vec<usize> = (0..conv.c_out).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut retained = order[..keep].to_vec();
        retained.sort_unstable();
        let threshold = retained.iter().map(|&c| scores[c]).fold(f64::INFINITY, f64::min);
        layers.push(LayerPlan {
            layer: i,
            consumer,
            c_out: conv.c_out,
            scores,
            retained,
            threshold,
        });
    }
    Ok(PrunePlan {
        prune_ratio: spec.prune_ratio,
        layers,
    })
}

fn pick<T: Copy>(values: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| values[i]).collect()
}

fn conv_keep_outputs<T: Scalar>(conv: &Conv2d<T>, keep: &[usize]) -> Conv2d<T> {
    let per = conv.c_in * conv.kernel * conv.kernel;
    Conv2d {
        c_out: keep.len(),
        weight: keep
            .iter()
            .flat_map(|&o| conv.weight[o * per..(o + 1) * per].iter().copied())
            .collect(),
        bias: conv.bias.as_ref().map(|b| pick(b, keep)),
        ..conv.clone()
    }
}

fn conv_keep_inputs<T: Scalar>(conv: &Conv2d<T>, keep: &[usize]) -> Conv2d<T> {
    let kk = conv.kernel * conv.kernel;
    let mut weight = Vec::with_capacity(conv.c_out * keep.len() * kk);
    for o in 0..conv.c_out {
        for &i in keep {
            let start = (o * conv.c_in + i) * kk;
            weight.extend_from_slice(&conv.weight[start..start + kk]);
        }
    }
    Conv2d {
        c_in: keep.len(),
        weight,
        ..conv.clone()
    }
}

fn dense_keep_inputs<T: Scalar>(dense: &Dense<T>, keep: &[usize]) -> Dense<T> {
    let weight = (0..dense.outputs)
        .flat_map(|o| keep.iter().map(move |&i| (o, i)))
        .map(|(o, i)| dense.weight[o * dense.inputs + i])
        .collect();
    Dense {
        inputs: keep.len(),
        weight,
        ..dense.clone()
    }
}

fn bn_keep<T: Scalar>(bn: &BatchNorm<T>, keep: &[usize]) -> BatchNorm<T> {
    BatchNorm {
        gamma: pick(&bn.gamma, keep),
        beta: pick(&bn.beta, keep),
        running_mean: pick(&bn.running_mean, keep),
        running_var: pick(&bn.running_var, keep),
    }
}

fn plan_mismatch(msg: String) -> Error {
    Error::ShapeMismatch(format!("plan does not fit model: {msg}"))
}

/// Physically removes the planned channels: conv output rows (and bias),
/// the BatchNorm rows between the conv and its consumer, and the consumer's
/// matching input channels.
pub fn apply_plan<T: Scalar>(model: &Model<T>, plan: &PrunePlan) -> Result<Model<T>> {
    let mut out = model.clone();
    for lp in &plan.layers {
        let check_conv = match out.layers.get(lp.layer) {
            Some(Layer::Conv2d(c)) => c.c_out == lp.c_out,
            _ => false,
        };
        if !check_conv || lp.retained.is_empty() || lp.retained.iter().any(|&c| c >= lp.c_out) {
            return Err(plan_mismatch(format!("layer {} is not a {}-channel conv", lp.layer, lp.c_out)));
        }
        if lp.consumer <= lp.layer || lp.consumer >= out.layers.len() {
            return Err(plan_mismatch(format!("bad consumer {} for layer {}", lp.consumer, lp.layer)));
        }
    }
    for lp in &plan.layers {
        let keep = &lp.retained;
        if let Layer::Conv2d(c) = &out.layers[lp.layer] {
            out.layers[lp.layer] = Layer::Conv2d(conv_keep_outputs(c, keep));
        }
        for j in lp.layer + 1..lp.consumer {
            if let Layer::BatchNorm(b) = &out.layers[j] {
                if b.channels() != lp.c_out {
                    return Err(plan_mismatch(format!("batch norm {j} width")));
                }
                out.layers[j] = Layer::BatchNorm(bn_keep(b, keep));
            }
        }
        out.layers[lp.consumer] = match &out.layers[lp.consumer] {
            Layer::Conv2d(c) if c.c_in == lp.c_out => Layer::Conv2d(conv_keep_inputs(c, keep)),
            Layer::Dense(d) if d.inputs == lp.c_out => Layer::Dense(dense_keep_inputs(d, keep)),
            _ => return Err(plan_mismatch(format!("consumer {} width", lp.consumer))),
        };
    }
    out.validate()?;
    Ok(out)
}

/// Trainable parameters, including biases and BatchNorm scale/shift.
pub fn count_params<T: Scalar>(model: &Model<T>) -> usize {
    model.param_count()
}

/// Multiply-accumulates of one forward pass on an `height x width` input:
/// `C_out C_in K^2 H_out W_out` per convolution plus `in * out` per dense layer.
pub fn count_macs<T: Scalar>(model: &Model<T>, height: usize, width: usize) -> Result<u64> {
    let (mut h, mut w) = (height, width);
    let mut macs = 0u64;
    for layer in &model.layers {
        match layer {
            Layer::Conv2d(c) => {
                let (ho, wo) = c.output_size(h, w)?;
                macs += (c.c_out * c.c_in * c.kernel * c.kernel * ho * wo) as u64;
                (h, w) = (ho, wo);
            }
            Layer::MaxPool(k) => {
                if h < *k || w < *k {
                    return Err(Error::ShapeMismatch(format!("{h}x{w} too small for pool {k}")));
                }
                (h, w) = (h / k, w / k);
            }
            Layer::GlobalAvgPool => (h, w) = (1, 1),
            Layer::Dense(d) => macs += (d.inputs * d.outputs) as u64,
            Layer::BatchNorm(_) | Layer::Relu => {}
        }
    }
    Ok(macs)
}

/// Sorted indices of the fine-tuning subsample:
/// `min(n, max(batch_size, ceil(fraction n)))` drawn without replacement.
pub fn finetune_subset(n: usize, spec: &PruneSpec, config: &TrainConfig) -> Result<Vec<usize>> {
    spec.validate()?;
    let m = masked_count(spec.finetune_fraction, n).max(config.batch_size).min(n);
    let mut rng = Rng::new(config.seed).child(FINETUNE_STREAM);
    let mut idx = rng.sample_without_replacement(n, m)?;
    idx.sort_unstable();
    Ok(idx)
}

/// Trains a pruned model for `spec.finetune_epochs` on a seeded subsample
/// of `samples`, with the pipeline and optimizer settings of `config`.
/// Zero epochs return the model untouched.
pub fn finetune(
    model: &Model<f32>,
    samples: &[&Sample],
    spec: &PruneSpec,
    config: &TrainConfig,
) -> Result<(Model<f32>, TrainHistory)> {
    spec.validate()?;
    if spec.finetune_epochs == 0 {
        return Ok((model.clone(), TrainHistory::default()));
    }
    if samples.is_empty() {
        return Err(Error::Empty("fine-tuning split".into()));
    }
    let subset: Vec<&Sample> = finetune_subset(samples.len(), spec, config)?
        .into_iter()
        .map(|i| samples[i])
        .collect();
    let cfg = TrainConfig {
        epochs: spec.finetune_epochs,
        ..config.clone()
    };
    let mut tuned = model.clone();
    let history = train(&mut tuned, &subset, &cfg)?;
    Ok((tuned, history))
}

pub const PLAN_COLUMNS: &str = "layer\tc_out\tretained\ttau\tkept_channels\tscores";

impl PrunePlan {
    /// One tab-separated row per pruned convolution.
    pub fn to_tsv(&self, header: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(h) = header {
            out.push_str(h);
            out.push('\n');
        }
        let _ = writeln!(out, "# prune_ratio={}", self.prune_ratio);
        out.push_str(PLAN_COLUMNS);
        out.push('\n');
        for lp in &self.layers {
            let kept: Vec<String> = lp.retained.iter().map(|c| c.to_string()).collect();
            let scores: Vec<String> = lp.scores.iter().map(|s| format!("{s:.6}")).collect();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.6}\t{}\t{}",
                lp.layer,
                lp.c_out,
                lp.retained.len(),
                lp.threshold,
                kept.join(","),
                scores.join(",")
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retention_rounding_table() {
        assert_eq!(retained_count(64, 0.5), 32);
        assert_eq!(retained_count(10, 0.85), 2);
        assert_eq!(retained_count(10, 0.7), 3);
        assert_eq!(retained_count(10, 0.2), 8);
        assert_eq!(retained_count(16, 0.0), 16);
        assert_eq!(retained_count(3, 0.999), 1);
        assert_eq!(retained_count(1, 0.8), 1);
    }

    #[test]
    fn importance_is_l1_per_output_channel() {
        let mut conv = Conv2d::<f32>::zeros(2, 3, 3, 1, 1, true);
        conv.weight[18..36].fill(1.0);
        conv.weight[36] = -2.5;
        conv.bias = Some(vec![100.0, 100.0, 100.0]);
        assert_eq!(channel_importance(&conv), vec![0.0, 18.0, 2.5]);
    }

    #[test]
    fn spec_validation() {
        assert!(PruneSpec::new(1.0).validate().is_err());
        assert!(PruneSpec::new(-0.1).validate().is_err());
        assert!(PruneSpec::new(0.8).validate().is_ok());
        let spec: PruneSpec = serde_json::from_str(r#"{"prune_ratio": 0.5}"#).unwrap();
        assert_eq!(spec.finetune_epochs, 5);
        assert_eq!(spec.finetune_fraction, 0.02);
    }
}
