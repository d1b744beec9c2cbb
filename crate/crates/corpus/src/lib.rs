//! Interleaved image-text corpus construction: JSON Lines ingestion,
//! document filtering, and a checksummed on-disk archive.

pub mod archive;
pub mod error;
pub mod filter;
pub mod gibberish;
pub mod pipeline;
pub mod raw;
pub mod synth;

pub use error::{CorpusError, Result};
pub use filter::{filter_document, FilterConfig, FilterDecision, Rule, Verdict};
pub use gibberish::{gibberish_score, GibberishConfig};
pub use pipeline::{run_pipeline, PipelineOutput, PipelineReport};
pub use raw::RawDocument;
