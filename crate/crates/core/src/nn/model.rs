use serde::{Deserialize, Serialize};

use super::layers::{
    gap_backward, gap_forward, maxpool_backward, maxpool_forward, relu_backward, relu_forward,
    BatchNorm, BnCache, Conv2d, Dense, LayerDef, Tensor, BN_EPS,
};
use super::scalar::Scalar;
use crate::error::{Error, Result};
use crate::tensor::{Image, Rng};

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Relu,
    MaxPool(usize),
    GlobalAvgPool,
    Dense(Dense<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn def(&self) -> LayerDef {
        match self {
            Layer::Conv2d(c) => LayerDef::Conv2d {
                c_in: c.c_in,
                c_out: c.c_out,
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
                bias: c.bias.is_some(),
            },
            Layer::BatchNorm(b) => LayerDef::BatchNorm {
                channels: b.channels(),
            },
            Layer::Relu => LayerDef::Relu,
            Layer::MaxPool(size) => LayerDef::MaxPool { size: *size },
            Layer::GlobalAvgPool => LayerDef::GlobalAvgPool,
            Layer::Dense(d) => LayerDef::Dense {
                inputs: d.inputs,
                outputs: d.outputs,
            },
        }
    }

    fn zeros(def: &LayerDef) -> Self {
        match *def {
            LayerDef::Conv2d {
                c_in,
                c_out,
                kernel,
                stride,
                padding,
                bias,
            } => Layer::Conv2d(Conv2d::zeros(c_in, c_out, kernel, stride, padding, bias)),
            LayerDef::BatchNorm { channels } => Layer::BatchNorm(BatchNorm::identity(channels)),
            LayerDef::Relu => Layer::Relu,
            LayerDef::MaxPool { size } => Layer::MaxPool(size),
            LayerDef::GlobalAvgPool => Layer::GlobalAvgPool,
            LayerDef::Dense { inputs, outputs } => Layer::Dense(Dense::zeros(inputs, outputs)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in BatchNorm.
    Train,
    /// Running statistics in BatchNorm.
    Eval,
}

#[derive(Debug, Clone)]
enum Cache<T> {
    Conv { input_shape: [usize; 4], cols: Vec<T> },
    BnTrain(BnCache<T>),
    BnEval { input: Tensor<T> },
    Relu { output: Tensor<T> },
    MaxPool { input_shape: [usize; 4], arg: Vec<usize> },
    Gap { input_shape: [usize; 4] },
    Dense { input: Tensor<T> },
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    mode: Mode,
    caches: Vec<Cache<T>>,
}

impl<T> Tape<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

/// Description of the default desk-scale classifier: four stride-2
/// conv/BN/ReLU blocks of widths 16, 32, 64, 64, global pooling, one logit.
pub fn default_arch(input_channels: usize) -> Vec<LayerDef> {
    let mut defs = Vec::new();
    let mut c_in = input_channels;
    for c_out in [16, 32, 64, 64] {
        defs.push(LayerDef::Conv2d {
            c_in,
            c_out,
            kernel: 3,
            stride: 2,
            padding: 1,
            bias: false,
        });
        defs.push(LayerDef::BatchNorm { channels: c_out });
        defs.push(LayerDef::Relu);
        c_in = c_out;
    }
    defs.push(LayerDef::GlobalAvgPool);
    defs.push(LayerDef::Dense {
        inputs: c_in,
        outputs: 1,
    });
    defs
}

/// Sequential network. Conv and dense layers form a chain: each one's
/// inputs are the outputs of the previous conv/dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub input_channels: usize,
    pub layers: Vec<Layer<T>>,
}

/// Borrowed view of a named parameter or buffer.
pub struct NamedTensor<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

impl<T: Scalar> Model<T> {
    /// All weights zero, BatchNorm as identity.
    pub fn zeros(input_channels: usize, defs: &[LayerDef]) -> Result<Self> {
        let model = Self {
            input_channels,
            layers: defs.iter().map(Layer::zeros).collect(),
        };
        model.validate()?;
        Ok(model)
    }

    /// Fan-in scaled uniform init: `sqrt(6 / fan_in)` for convolutions
    /// (followed by ReLU), `1 / sqrt(fan_in)` for dense layers. Biases start at zero.
    pub fn init(input_channels: usize, defs: &[LayerDef], rng: &mut Rng) -> Result<Self> {
        let mut model = Self::zeros(input_channels, defs)?;
        for layer in &mut model.layers {
            let (weights, bound) = match layer {
                Layer::Conv2d(c) => {
                    let fan_in = (c.c_in * c.kernel * c.kernel) as f64;
                    (&mut c.weight, (6.0 / fan_in).sqrt())
                }
                Layer::Dense(d) => (&mut d.weight, 1.0 / (d.inputs as f64).sqrt()),
                _ => continue,
            };
            for w in weights.iter_mut() {
                *w = T::from_f64(rng.uniform(-bound, bound)?);
            }
        }
        Ok(model)
    }

    pub fn defs(&self) -> Vec<LayerDef> {
        self.layers.iter().map(Layer::def).collect()
    }

    /// Checks that consecutive channel counts agree and that the network ends in one logit.
    pub fn validate(&self) -> Result<()> {
        let mut channels = self.input_channels;
        let mut flat = false;
        for (i, layer) in self.layers.iter().enumerate() {
            let mismatch = |expected: usize| {
                Error::ShapeMismatch(format!(
                    "layer {i} expects {expected} input channels but receives {channels}"
                ))
            };
            match layer {
                Layer::Conv2d(c) => {
                    if flat {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {i}: convolution after global pooling"
                        )));
                    }
                    if c.c_in != channels {
                        return Err(mismatch(c.c_in));
                    }
                    if c.kernel == 0 || c.stride == 0 {
                        return Err(Error::InvalidArgument(format!(
                            "layer {i}: kernel and stride must be positive"
                        )));
                    }
                    channels = c.c_out;
                }
                Layer::BatchNorm(b) => {
                    if b.channels() != channels {
                        return Err(mismatch(b.channels()));
                    }
                }
                Layer::Dense(d) => {
                    if !flat {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {i}: dense layer needs global pooling first"
                        )));
                    }
                    if d.inputs != channels {
                        return Err(mismatch(d.inputs));
                    }
                    channels = d.outputs;
                }
                Layer::GlobalAvgPool => flat = true,
                Layer::MaxPool(size) => {
                    if *size == 0 {
                        return Err(Error::InvalidArgument(format!(
                            "layer {i}: pool size must be positive"
                        )));
                    }
                }
                Layer::Relu => {}
            }
        }
        if !flat || channels != 1 {
            return Err(Error::ShapeMismatch(format!(
                "network must end in global pooling and a single output, got {channels}"
            )));
        }
        Ok(())
    }

    /// For each conv/dense layer, the index of the conv/dense layer whose
    /// output channels feed it (`None` for the first).
    pub fn dependencies(&self) -> Vec<(usize, Option<usize>)> {
        let mut prev = None;
        let mut edges = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if matches!(layer, Layer::Conv2d(_) | Layer::Dense(_)) {
                edges.push((i, prev));
                prev = Some(i);
            }
        }
        edges
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect::<Vec<U>>();
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv2d(c) => Layer::Conv2d(Conv2d {
                    c_in: c.c_in,
                    c_out: c.c_out,
                    kernel: c.kernel,
                    stride: c.stride,
                    padding: c.padding,
                    weight: conv(&c.weight),
                    bias: c.bias.as_deref().map(conv),
                }),
                Layer::BatchNorm(b) => Layer::BatchNorm(BatchNorm {
                    gamma: conv(&b.gamma),
                    beta: conv(&b.beta),
                    running_mean: conv(&b.running_mean),
                    running_var: conv(&b.running_var),
                }),
                Layer::Relu => Layer::Relu,
                Layer::MaxPool(s) => Layer::MaxPool(*s),
                Layer::GlobalAvgPool => Layer::GlobalAvgPool,
                Layer::Dense(d) => Layer::Dense(Dense {
                    inputs: d.inputs,
                    outputs: d.outputs,
                    weight: conv(&d.weight),
                    bias: conv(&d.bias),
                }),
            })
            .collect();
        Model {
            input_channels: self.input_channels,
            layers,
        }
    }

    /// Trainable tensors in a fixed order: per layer, weight then bias
    /// (convolution, dense) or gamma then beta (BatchNorm).
    pub fn params(&self) -> Vec<NamedTensor<'_, T>> {
        self.tensors(false)
    }

    /// Parameters plus BatchNorm running statistics.
    pub fn tensors_with_buffers(&self) -> Vec<NamedTensor<'_, T>> {
        self.tensors(true)
    }

    fn tensors<'a>(&'a self, buffers: bool) -> Vec<NamedTensor<'a, T>> {
        let mut out = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, data: &'a [T]| {
            out.push(NamedTensor { name, shape, data });
        };
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv2d(c) => {
                    let shape = vec![c.c_out, c.c_in, c.kernel, c.kernel];
                    push(format!("{i}.weight"), shape, &c.weight[..]);
                    if let Some(b) = &c.bias {
                        push(format!("{i}.bias"), vec![c.c_out], &b[..]);
                    }
                }
                Layer::BatchNorm(b) => {
                    let n = vec![b.channels()];
                    push(format!("{i}.gamma"), n.clone(), &b.gamma[..]);
                    push(format!("{i}.beta"), n.clone(), &b.beta[..]);
                    if buffers {
                        push(format!("{i}.running_mean"), n.clone(), &b.running_mean[..]);
                        push(format!("{i}.running_var"), n, &b.running_var[..]);
                    }
                }
                Layer::Dense(d) => {
                    push(format!("{i}.weight"), vec![d.outputs, d.inputs], &d.weight[..]);
                    push(format!("{i}.bias"), vec![d.outputs], &d.bias[..]);
                }
                _ => {}
            }
        }
        out
    }

    /// Mutable parameters in the order of [`Model::params`].
    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.tensors_mut(false)
    }

    pub(crate) fn tensors_mut(&mut self, buffers: bool) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2d(c) => {
                    out.push(&mut c.weight);
                    if let Some(b) = c.bias.as_mut() {
                        out.push(b);
                    }
                }
                Layer::BatchNorm(b) => {
                    out.push(&mut b.gamma);
                    out.push(&mut b.beta);
                    if buffers {
                        out.push(&mut b.running_mean);
                        out.push(&mut b.running_var);
                    }
                }
                Layer::Dense(d) => {
                    out.push(&mut d.weight);
                    out.push(&mut d.bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }

    /// Runs the network; the tape records what [`Model::backward`] needs.
    /// Never mutates the model; see [`Model::update_running_stats`].
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Tape<T>)> {
        if x.c != self.input_channels {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} input channels, got {}",
                self.input_channels, x.c
            )));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (next, cache) = match layer {
                Layer::Conv2d(c) => {
                    let shape = cur.shape();
                    let (y, cols) = c.forward(&cur)?;
                    (y, Cache::Conv { input_shape: shape, cols })
                }
                Layer::BatchNorm(b) => match mode {
                    Mode::Train => {
                        let (y, bc) = b.forward_train(&cur)?;
                        (y, Cache::BnTrain(bc))
                    }
                    Mode::Eval => (b.forward_eval(&cur)?, Cache::BnEval { input: cur }),
                },
                Layer::Relu => {
                    let y = relu_forward(&cur);
                    (y.clone(), Cache::Relu { output: y })
                }
                Layer::MaxPool(size) => {
                    let (y, arg) = maxpool_forward(&cur, *size)?;
                    (y, Cache::MaxPool { input_shape: cur.shape(), arg })
                }
                Layer::GlobalAvgPool => (gap_forward(&cur), Cache::Gap { input_shape: cur.shape() }),
                Layer::Dense(d) => (d.forward(&cur)?, Cache::Dense { input: cur }),
            };
            caches.push(cache);
            cur = next;
        }
        Ok((cur, Tape { mode, caches }))
    }

    /// One logit per image.
    pub fn logits(&self, x: &Tensor<T>, mode: Mode) -> Result<Vec<T>> {
        let (out, _) = self.forward(x, mode)?;
        Ok(out.data)
    }

    /// Folds the batch statistics of a train-mode tape into the running estimates.
    pub fn update_running_stats(&mut self, tape: &Tape<T>) {
        for (layer, cache) in self.layers.iter_mut().zip(&tape.caches) {
            if let (Layer::BatchNorm(b), Cache::BnTrain(c)) = (layer, cache) {
                b.update_running(c);
            }
        }
    }

    /// Gradients of every parameter (order of [`Model::params`]) given
    /// the gradient of the loss with respect to the network output.
    pub fn backward(&self, tape: &Tape<T>, grad_out: &Tensor<T>) -> Result<Vec<Vec<T>>> {
        if tape.caches.len() != self.layers.len() {
            return Err(Error::ShapeMismatch("tape does not belong to this model".into()));
        }
        let first_param_layer = self
            .layers
            .iter()
            .position(|l| matches!(l, Layer::Conv2d(_) | Layer::Dense(_) | Layer::BatchNorm(_)));
        let mut per_layer: Vec<Vec<Vec<T>>> = vec![Vec::new(); self.layers.len()];
        let mut g = grad_out.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(&tape.caches).enumerate().rev() {
            let need_dx = first_param_layer.is_some_and(|f| i > f);
            g = match (layer, cache) {
                (Layer::Conv2d(c), Cache::Conv { input_shape, cols }) => {
                    let (dw, db, dx) = c.backward(*input_shape, cols, &g, need_dx);
                    per_layer[i].push(dw);
                    per_layer[i].extend(db);
                    match dx {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                (Layer::BatchNorm(b), Cache::BnTrain(bc)) => {
                    let (dg, db, dx) = b.backward(bc, &g);
                    per_layer[i].push(dg);
                    per_layer[i].push(db);
                    dx
                }
                (Layer::BatchNorm(b), Cache::BnEval { input }) => {
                    let (dg, db, dx) = bn_eval_backward(b, input, &g);
                    per_layer[i].push(dg);
                    per_layer[i].push(db);
                    dx
                }
                (Layer::Relu, Cache::Relu { output }) => relu_backward(output, &g),
                (Layer::MaxPool(_), Cache::MaxPool { input_shape, arg }) => {
                    maxpool_backward(*input_shape, arg, &g)
                }
                (Layer::GlobalAvgPool, Cache::Gap { input_shape }) => gap_backward(*input_shape, &g),
                (Layer::Dense(d), Cache::Dense { input }) => {
                    let (dw, db, dx) = d.backward(input, &g);
                    per_layer[i].push(dw);
                    per_layer[i].push(db);
                    dx
                }
                _ => return Err(Error::ShapeMismatch(format!("tape entry {i} does not match layer"))),
            };
        }
        Ok(per_layer.into_iter().flatten().collect())
    }
}

fn bn_eval_backward<T: Scalar>(
    b: &BatchNorm<T>,
    x: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Vec<T>, Vec<T>, Tensor<T>) {
    let hw = x.h * x.w;
    let eps = T::from_f64(BN_EPS);
    let mut dgamma = vec![T::zero(); x.c];
    let mut dbeta = vec![T::zero(); x.c];
    let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
    for i in 0..x.n {
        for c in 0..x.c {
            let inv = T::one() / (b.running_var[c] + eps).sqrt();
            let base = (i * x.c + c) * hw;
            for j in base..base + hw {
                dgamma[c] += dy.data[j] * (x.data[j] - b.running_mean[c]) * inv;
                dbeta[c] += dy.data[j];
                dx.data[j] = dy.data[j] * b.gamma[c] * inv;
            }
        }
    }
    (dgamma, dbeta, dx)
}

/// Stacks HWC images into an NCHW tensor. All images must share a shape.
pub fn images_to_tensor<T: Scalar>(images: &[&Image]) -> Result<Tensor<T>> {
    let first = images.first().ok_or(Error::Empty("image batch".into()))?;
    let (h, w, c) = (first.height(), first.width(), first.channels());
    let mut t = Tensor::zeros(images.len(), c, h, w);
    let hw = h * w;
    for (i, img) in images.iter().enumerate() {
        if (img.height(), img.width(), img.channels()) != (h, w, c) {
            return Err(Error::ShapeMismatch(format!(
                "batch mixes {h}x{w}x{c} with {}x{}x{}",
                img.height(),
                img.width(),
                img.channels()
            )));
        }
        let dst = &mut t.data[i * c * hw..(i + 1) * c * hw];
        for (p, px) in img.as_slice().chunks_exact(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                dst[ch * hw + p] = T::from_f64(v as f64);
            }
        }
    }
    Ok(t)
}

/// Serializable description used in model manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_channels: usize,
    pub layers: Vec<LayerDef>,
}
