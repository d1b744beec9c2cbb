//! Prompt-based evaluation: templates, decoding and scoring protocols,
//! metrics, synthetic task sets and mock backends.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod report;
pub mod synth;
pub mod tasks;
pub mod template;

pub use data::Dataset;
pub use error::{EvalError, Result};
pub use model::{EvalModel, RandomModel, UniformModel};
pub use report::{run_task, EvalOptions, EvalReport};
pub use tasks::{RavenInstance, YesScoring};
pub use template::{build_prompt, Example, Prompt, PromptTemplate};
