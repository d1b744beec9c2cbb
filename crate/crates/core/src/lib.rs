//! Token stream, vision path, causal decoder, decoding and training for a
//! desk-scale multimodal language model.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod generate;
pub mod image;
pub mod layers;
pub mod model;
pub mod stream;
pub mod synth;
pub mod tokenizer;
pub mod train;
pub mod vision;
pub mod xpos;

pub use config::RunConfig;
pub use error::{CoreError, Result};
pub use generate::{generate, LanguageModel, Strategy};
pub use image::ImageTensor;
pub use model::{ModelConfig, MultimodalLm};
pub use stream::{Context, EncodedUnit, MultimodalDocument, PackedSequence, Segment};
