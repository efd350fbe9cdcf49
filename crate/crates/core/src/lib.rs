//! Fish segmentation for forward-looking multibeam sonar imagery.

pub mod autodiff;
pub mod bench;
pub mod codec;
pub mod error;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod par;
pub mod quant;
pub mod scalar;
pub mod sonar;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod weights;

pub use autodiff::{Mode, Tape, Var};
pub use error::{Error, ErrorKind, Result};
pub use model::{ModelConfig, SegmentationModel};
pub use scalar::{DType, Float};
pub use tensor::Tensor;
