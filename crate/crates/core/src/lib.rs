//! Short text expansion with a trainable memory network.
//!
//! A short text is embedded, a handful of long documents are retrieved for it
//! by Dirichlet-smoothed query likelihood, and the model reads that memory
//! with soft or Gumbel-Softmax attention, folds what it read into the query
//! through GRU gating over one or more hops, and classifies the concatenation
//! of the original and expanded representations. Gradients are derived by
//! hand; [`numerics::finite_diff_grad`] checks them.
//!
//! Rocchio expansion over TFIDF vectors with a logistic classifier is
//! provided in [`baselines`] for comparison.

mod binio;

pub mod baselines;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod retrieval;
pub mod synthetic;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use metrics::EvalMetrics;
pub use model::{AttentionMode, Checkpoint, ForwardTrace, ModelInput, ModelParameters};
pub use numerics::Matrix;
pub use retrieval::{InvertedIndex, MemorySet, ScoredDoc};
pub use text::{LabelSet, LongDocument, RawText, ShortText, Vocabulary};
pub use train::{Example, TrainConfig};
