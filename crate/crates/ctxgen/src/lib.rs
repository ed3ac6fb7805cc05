//! Data augmentation for text classification by way of context generation.
//!
//! A pluggable generative text backend is fine-tuned on question-answer-context
//! documents until it can write the *context* for a given question and answer.
//! Classification tasks are cast into the same format (the verbalized label is
//! the answer, the document is the context), the tuned generator is adapted on
//! a few-shot set, and prompting it once per class yields synthetic labeled
//! training data for a downstream classifier.
//!
//! Module map:
//!
//! - [`schema`]: domain types, the built-in task catalog, few-shot sampling
//! - [`qac`]: question-answer-context serialization, casting, corpus ingestion
//! - [`backend`]: the generative-backend contract, top-k sampling, and a
//!   deterministic character n-gram reference backend
//! - [`augment`]: the fine-tune → adapt → generate pipeline and its diagnostics
//! - [`baselines`]: EDA and label-prefix comparison generators
//! - [`eval`]: classifier contract, micro/macro F1, update-step parity,
//!   self-training
//! - [`protocol`]: the restart/evaluation protocol that ties it all together
//! - [`config`]: the declarative experiment configuration
//! - [`rng`]: the fully specified seeded random stream everything draws from

pub mod augment;
pub mod backend;
pub mod baselines;
pub mod config;
pub mod error;
pub mod eval;
pub mod protocol;
pub mod qac;
pub mod rng;
pub mod schema;

pub use error::{Error, Result};
