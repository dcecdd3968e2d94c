//! The frozen dual encoder standing in for a pretrained image-text model: a
//! vision transformer producing I-features and a bag-of-embeddings text
//! encoder mapping into the same feature space.

pub mod config;
pub mod model;
pub mod types;

pub use config::{num_patches, EncoderConfig, FlopLedger};
pub use model::{Block, DualEncoder, MergeState, WEIGHTS_MAGIC};
pub use types::{Feature, Frame, GridPos, TokenSequence};
