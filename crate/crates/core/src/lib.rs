//! Interleaved video feature encoding: a frozen ViT teacher encodes
//! I-frames, a token-reduced student with a learned residual token encodes
//! the P-frames in between. Includes distillation of the residual
//! tokenizer, analytic cost models and zero-shot temporal grounding.

pub mod autodiff;
pub mod bench;
#[cfg(feature = "cli")]
pub mod cli;
pub mod config;
pub mod corpus;
pub mod distill;
pub mod error;
pub mod grounding;
pub mod io;
pub mod motion;
pub mod parallel;
pub mod reduction;
pub mod residual;
pub mod teacher;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
