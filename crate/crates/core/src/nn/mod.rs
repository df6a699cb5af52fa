//! Small sequential CNN for binary real/fake classification, with exact
//! backpropagation. Generic over [`Scalar`] so that the same code trains in
//! `f32` and is checked against finite differences in `f64`.

mod layers;
mod loss;
mod model;
mod optim;
mod scalar;
mod serialize;
mod train;

pub use layers::{BatchNorm, Conv2d, Dense, LayerDef, Tensor, BN_EPS, BN_MOMENTUM};
pub use loss::{bce_grad, bce_loss, sigmoid};
pub use model::{default_arch, images_to_tensor, Architecture, Layer, Mode, Model, NamedTensor, Tape};
pub use optim::{Optimizer, OptimizerState};
pub use scalar::{matmul, Scalar};
pub use serialize::{
    decode_model, encode_model, load_model, save_model, ModelManifest, TensorEntry, FORMAT_VERSION, MAGIC,
};
pub use train::{predict_scores, score_images, step, train, TrainConfig, TrainHistory, EVAL_BATCH};
