//! Frequency-domain masking augmentation for generated-image detectors,
//! with the supporting pieces needed to study it at desk scale: 2-D
//! transforms, a synthetic real/fake generator, a small CNN trainer,
//! structured L1 channel pruning, ranking metrics and spectrum analysis.

pub mod augment;
pub mod error;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod pruning;
pub mod spectra;
pub mod synthgen;
pub mod tensor;
pub mod transforms;

pub use error::{Error, Result};
pub use tensor::{Grid, Image, Rng, Spectrum};
